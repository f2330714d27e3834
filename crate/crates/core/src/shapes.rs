//! Procedural test and phantom geometry: tetrahedron, icosahedron,
//! subdivided icospheres, planar patches, and boxes.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use crate::mesh::SurfaceMesh;

/// Regular tetrahedron inscribed in the unit sphere.
pub fn tetrahedron() -> SurfaceMesh {
    let s = 1.0 / 3.0_f64.sqrt();
    let verts = vec![
        Point3::new(s, s, s),
        Point3::new(s, -s, -s),
        Point3::new(-s, s, -s),
        Point3::new(-s, -s, s),
    ];
    let tris = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    SurfaceMesh::new(verts, tris).expect("tetrahedron is valid")
}

/// Regular icosahedron on the unit sphere.
pub fn icosahedron() -> SurfaceMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let inv = 1.0 / (1.0 + phi * phi).sqrt();
    let a = inv;
    let b = phi * inv;
    let verts = vec![
        Point3::new(-a, b, 0.0),
        Point3::new(a, b, 0.0),
        Point3::new(-a, -b, 0.0),
        Point3::new(a, -b, 0.0),
        Point3::new(0.0, -a, b),
        Point3::new(0.0, a, b),
        Point3::new(0.0, -a, -b),
        Point3::new(0.0, a, -b),
        Point3::new(b, 0.0, -a),
        Point3::new(b, 0.0, a),
        Point3::new(-b, 0.0, -a),
        Point3::new(-b, 0.0, a),
    ];
    let tris = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    SurfaceMesh::new(verts, tris).expect("icosahedron is valid")
}

/// Unit-radius icosphere after `subdivisions` rounds of 1:4 subdivision.
/// Vertex count is 10 * 4^s + 2.
pub fn icosphere(subdivisions: usize) -> SurfaceMesh {
    let base = icosahedron();
    let mut verts: Vec<Point3<f64>> = base.vertices().to_vec();
    let mut tris: Vec<[usize; 3]> = base.triangles().to_vec();
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        for tri in &tris {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = Point3::from((verts[a].coords + verts[b].coords) / 2.0);
                    verts.push(Point3::from(m.coords.normalize()));
                    verts.len() - 1
                });
            }
            next.push([tri[0], mids[0], mids[2]]);
            next.push([tri[1], mids[1], mids[0]]);
            next.push([tri[2], mids[2], mids[1]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        tris = next;
    }
    SurfaceMesh::new(verts, tris).expect("icosphere is valid")
}

/// Two triangles covering the unit square in the z = 0 plane.
pub fn unit_square() -> SurfaceMesh {
    let verts = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(1.0, 1.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
    ];
    SurfaceMesh::new(verts, vec![[0, 1, 2], [0, 2, 3]]).expect("square is valid")
}

/// Regular (n x n)-vertex grid patch in the z = 0 plane over [0, 1]^2.
pub fn planar_grid(n: usize) -> SurfaceMesh {
    assert!(n >= 2);
    let step = 1.0 / (n - 1) as f64;
    let mut verts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            verts.push(Point3::new(i as f64 * step, j as f64 * step, 0.0));
        }
    }
    let mut tris = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v00 = j * n + i;
            let v10 = v00 + 1;
            let v01 = v00 + n;
            let v11 = v01 + 1;
            tris.push([v00, v10, v11]);
            tris.push([v00, v11, v01]);
        }
    }
    SurfaceMesh::new(verts, tris).expect("grid is valid")
}

/// Closed axis-aligned box (12 triangles).
pub fn box_mesh(center: Point3<f64>, half_extents: Vector3<f64>) -> SurfaceMesh {
    let h = half_extents;
    let c = center;
    let verts = vec![
        Point3::new(c.x - h.x, c.y - h.y, c.z - h.z),
        Point3::new(c.x + h.x, c.y - h.y, c.z - h.z),
        Point3::new(c.x + h.x, c.y + h.y, c.z - h.z),
        Point3::new(c.x - h.x, c.y + h.y, c.z - h.z),
        Point3::new(c.x - h.x, c.y - h.y, c.z + h.z),
        Point3::new(c.x + h.x, c.y - h.y, c.z + h.z),
        Point3::new(c.x + h.x, c.y + h.y, c.z + h.z),
        Point3::new(c.x - h.x, c.y + h.y, c.z + h.z),
    ];
    let tris = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom (z-)
        [4, 5, 6],
        [4, 6, 7], // top (z+)
        [0, 1, 5],
        [0, 5, 4], // front (y-)
        [2, 3, 7],
        [2, 7, 6], // back (y+)
        [1, 2, 6],
        [1, 6, 5], // right (x+)
        [3, 0, 4],
        [3, 4, 7], // left (x-)
    ];
    SurfaceMesh::new(verts, tris).expect("box is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_is_closed_and_oriented_outward() {
        let mesh = box_mesh(Point3::origin(), Vector3::new(0.5, 0.5, 0.5));
        assert!(mesh.is_closed());
        // Signed volume via divergence theorem should be +1 for outward orientation.
        let mut vol = 0.0;
        for t in 0..mesh.triangle_count() {
            let [a, b, c] = mesh.triangle_points(t);
            vol += a.coords.dot(&b.coords.cross(&c.coords)) / 6.0;
        }
        assert!((vol - 1.0).abs() < 1e-12, "signed volume {vol}");
    }

    #[test]
    fn icosphere_vertices_on_unit_sphere() {
        let mesh = icosphere(2);
        for v in mesh.vertices() {
            assert!((v.coords.norm() - 1.0).abs() < 1e-12);
        }
    }
}
