//! Triangle surface meshes with validation, adjacency helpers, and basic measures.
//!
//! All coordinates are in millimeters. A [`SurfaceMesh`] is immutable after
//! construction; every constructor validates the invariants (index bounds,
//! no repeated vertex index inside a triangle, every edge shared by at most
//! two triangles), so downstream code can rely on them.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs at least 3 vertices and 1 triangle (got {vertices} vertices, {triangles} triangles)")]
    Empty { vertices: usize, triangles: usize },
    #[error(
        "triangle {triangle} references vertex {index}, but the mesh has {vertex_count} vertices"
    )]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("triangle {triangle} repeats a vertex index")]
    DegenerateTriangle { triangle: usize },
    #[error("non-manifold edge ({v0}, {v1}): shared by {count} triangles, at most 2 allowed")]
    NonManifoldEdge { v0: usize, v1: usize, count: usize },
    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFiniteVertex { vertex: usize },
    #[error("field length {found} does not match vertex count {expected}")]
    FieldLengthMismatch { expected: usize, found: usize },
    #[error("meshes do not share topology: {details}")]
    TopologyMismatch { details: String },
}

/// Immutable triangle surface mesh in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    name: Option<String>,
}

impl SurfaceMesh {
    /// Build a mesh, checking all structural invariants.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.len() < 3 || triangles.is_empty() {
            return Err(MeshError::Empty {
                vertices: vertices.len(),
                triangles: triangles.len(),
            });
        }
        for (vi, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(MeshError::NonFiniteVertex { vertex: vi });
            }
        }
        for (ti, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: ti,
                        index: i,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle { triangle: ti });
            }
        }
        let mesh = Self {
            vertices,
            triangles,
            name: None,
        };
        for ((v0, v1), tris) in mesh.edge_map() {
            if tris.len() > 2 {
                return Err(MeshError::NonManifoldEdge {
                    v0,
                    v1,
                    count: tris.len(),
                });
            }
        }
        Ok(mesh)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Same topology, new vertex positions. Positions are checked for
    /// finiteness; the (already validated) connectivity is reused as is.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::FieldLengthMismatch {
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        for (vi, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(MeshError::NonFiniteVertex { vertex: vi });
            }
        }
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            name: self.name.clone(),
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Corner positions of triangle `t`.
    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Map from undirected edge (min, max) to the triangles sharing it,
    /// in deterministic (BTreeMap) order.
    pub fn edge_map(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (ti, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                map.entry(key).or_default().push(ti);
            }
        }
        map
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_map().values().all(|tris| tris.len() == 2)
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edge_map();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .keys()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum();
        total / edges.len() as f64
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_map()
            .keys()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self) -> Point3<f64> {
        let mut c = Vector3::zeros();
        for v in &self.vertices {
            c += v.coords;
        }
        Point3::from(c / self.vertices.len() as f64)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        (min, max)
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            triangles: self.triangles.clone(),
            name: self.name.clone(),
        }
    }

    /// Checks vertex count and triangle list equality with another mesh.
    pub fn same_topology(&self, other: &Self) -> bool {
        self.vertex_count() == other.vertex_count() && self.triangles == other.triangles
    }
}
