//! ASCII OFF and PLY mesh readers and writers.
//!
//! Readers keep positions and triangulated faces, ignoring any extra vertex
//! attributes. Writers emit positions and triangles only, formatting floats
//! with the shortest round-trip representation so that a write/read cycle
//! reproduces coordinates exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::mesh::{MeshError, SurfaceMesh};

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format: {0:?} (expected .off or .ply)")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Invalid(#[from] MeshError),
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse {
        line,
        message: message.into(),
    }
}

/// Load a mesh, picking the format from the file extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh, MeshIoError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let text = fs::read_to_string(path)?;
    match ext.as_str() {
        "off" => parse_off(&text),
        "ply" => parse_ply(&text),
        other => Err(MeshIoError::UnsupportedFormat(other.to_string())),
    }
}

/// Save a mesh, picking the format from the file extension.
pub fn save_mesh(path: impl AsRef<Path>, mesh: &SurfaceMesh) -> Result<(), MeshIoError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let text = match ext.as_str() {
        "off" => write_off(mesh),
        "ply" => write_ply(mesh),
        other => return Err(MeshIoError::UnsupportedFormat(other.to_string())),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_off(text: &str) -> Result<SurfaceMesh, MeshIoError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (lno, header) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
    if !header.eq_ignore_ascii_case("OFF") {
        return Err(parse_err(
            lno,
            format!("expected OFF header, got {header:?}"),
        ));
    }
    let (lno, counts) = lines
        .next()
        .ok_or_else(|| parse_err(lno, "missing counts line"))?;
    let mut it = counts.split_whitespace();
    let nv: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(lno, "bad vertex count"))?;
    let nf: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(lno, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| parse_err(lno, "unexpected end of vertex list"))?;
        let mut t = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in &mut coord {
            *c = t
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(lno, "bad vertex coordinate"))?;
        }
        vertices.push(Point3::new(coord[0], coord[1], coord[2]));
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| parse_err(lno, "unexpected end of face list"))?;
        let mut t = line.split_whitespace();
        let k: usize = t
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(lno, "bad face arity"))?;
        let idx: Vec<usize> = (0..k)
            .map(|_| {
                t.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(lno, "bad face index"))
            })
            .collect::<Result<_, _>>()?;
        fan_triangulate(&idx, &mut triangles, lno)?;
    }

    Ok(SurfaceMesh::new(vertices, triangles)?)
}

pub fn write_off(mesh: &SurfaceMesh) -> String {
    let mut out = String::new();
    out.push_str("OFF\n");
    let _ = writeln!(out, "{} {} 0", mesh.vertex_count(), mesh.triangle_count());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

pub fn parse_ply(text: &str) -> Result<SurfaceMesh, MeshIoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (lno, magic) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
    if magic != "ply" {
        return Err(parse_err(lno, "missing ply magic"));
    }

    // Header: collect per-element property layouts.
    struct Element {
        name: String,
        count: usize,
        properties: Vec<String>, // property names; "list" entries marked specially
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    let mut header_end = 0;
    for (lno, line) in lines.by_ref() {
        header_end = lno;
        if line.starts_with("comment") || line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("format") {
            let rest = rest.trim();
            if rest.starts_with("ascii") {
                ascii = true;
            } else {
                return Err(parse_err(lno, "only ascii PLY is supported"));
            }
        } else if let Some(rest) = line.strip_prefix("element") {
            let mut t = rest.split_whitespace();
            let name = t
                .next()
                .ok_or_else(|| parse_err(lno, "element without name"))?;
            let count: usize = t
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(lno, "element without count"))?;
            elements.push(Element {
                name: name.to_string(),
                count,
                properties: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix("property") {
            let el = elements
                .last_mut()
                .ok_or_else(|| parse_err(lno, "property before element"))?;
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            if tokens.first() == Some(&"list") {
                el.properties.push("__list__".to_string());
            } else {
                let name = tokens
                    .last()
                    .ok_or_else(|| parse_err(lno, "property without name"))?;
                el.properties.push((*name).to_string());
            }
        } else if line == "end_header" {
            break;
        } else {
            return Err(parse_err(lno, format!("unknown header line {line:?}")));
        }
    }
    if !ascii {
        return Err(parse_err(header_end, "missing `format ascii 1.0` line"));
    }

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut data = lines.filter(|(_, l)| !l.is_empty());
    for el in &elements {
        match el.name.as_str() {
            "vertex" => {
                let ix = el.properties.iter().position(|p| p == "x");
                let iy = el.properties.iter().position(|p| p == "y");
                let iz = el.properties.iter().position(|p| p == "z");
                let (ix, iy, iz) = match (ix, iy, iz) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => return Err(parse_err(header_end, "vertex element lacks x/y/z")),
                };
                for _ in 0..el.count {
                    let (lno, line) = data
                        .next()
                        .ok_or_else(|| parse_err(header_end, "unexpected end of vertices"))?;
                    let tokens: Vec<&str> = line.split_whitespace().collect();
                    let get = |i: usize| -> Result<f64, MeshIoError> {
                        tokens
                            .get(i)
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| parse_err(lno, "bad vertex value"))
                    };
                    vertices.push(Point3::new(get(ix)?, get(iy)?, get(iz)?));
                }
            }
            "face" => {
                for _ in 0..el.count {
                    let (lno, line) = data
                        .next()
                        .ok_or_else(|| parse_err(header_end, "unexpected end of faces"))?;
                    let mut t = line.split_whitespace();
                    let k: usize = t
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(lno, "bad face arity"))?;
                    let idx: Vec<usize> = (0..k)
                        .map(|_| {
                            t.next()
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| parse_err(lno, "bad face index"))
                        })
                        .collect::<Result<_, _>>()?;
                    fan_triangulate(&idx, &mut triangles, lno)?;
                }
            }
            _ => {
                // Skip unknown elements line by line.
                for _ in 0..el.count {
                    data.next();
                }
            }
        }
    }

    Ok(SurfaceMesh::new(vertices, triangles)?)
}

pub fn write_ply(mesh: &SurfaceMesh) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertex_count());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(out, "element face {}", mesh.triangle_count());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

fn fan_triangulate(
    idx: &[usize],
    triangles: &mut Vec<[usize; 3]>,
    line: usize,
) -> Result<(), MeshIoError> {
    if idx.len() < 3 {
        return Err(parse_err(line, "face with fewer than 3 vertices"));
    }
    for k in 1..idx.len() - 1 {
        triangles.push([idx[0], idx[k], idx[k + 1]]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn off_round_trip_is_exact() {
        let mesh = shapes::icosphere(2);
        let text = write_off(&mesh);
        let back = parse_off(&text).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let mesh = shapes::tetrahedron();
        let text = write_ply(&mesh);
        let back = parse_ply(&text).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ply_extra_vertex_properties_are_ignored() {
        let text = "ply\nformat ascii 1.0\ncomment demo\nelement vertex 3\n\
property float nx\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n\
0.5 0 0 0 255\n0.5 1 0 0 255\n0.5 0 1 0 255\n3 0 1 2\n";
        let mesh = parse_ply(text).unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.vertices()[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn off_quad_faces_are_fan_triangulated() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let mesh = parse_off(text).unwrap();
        assert_eq!(mesh.triangle_count(), 2);
    }

    #[test]
    fn invalid_mesh_in_file_is_rejected() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
        let err = parse_off(text).unwrap_err();
        assert!(matches!(err, MeshIoError::Invalid(_)));
    }

    #[test]
    fn file_round_trip_via_extension_dispatch() {
        let dir = std::env::temp_dir().join("deforma_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mesh = shapes::icosahedron();
        for name in ["m.off", "m.ply"] {
            let path = dir.join(name);
            save_mesh(&path, &mesh).unwrap();
            let back = load_mesh(&path).unwrap();
            for (a, b) in mesh.vertices().iter().zip(back.vertices()) {
                assert!((a - b).norm() < 1e-6);
            }
        }
    }
}
