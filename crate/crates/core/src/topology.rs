//! One-ring adjacency, per-edge incident triangles, and edge weights
//! (cotangent or uniform) for the discrete Laplace operator.

use serde::{Deserialize, Serialize};

use crate::mesh::{MeshError, SurfaceMesh};

/// Edge-weight discretization for the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Cotangent,
    Uniform,
}

/// Cotangent edge weights are clamped to this floor when the summed
/// cotangents are non-positive (obtuse or near-degenerate configurations),
/// which keeps the assembled systems positive definite.
pub const MIN_COTANGENT_WEIGHT: f64 = 1e-6;

/// Adjacency and edge weights of a [`SurfaceMesh`].
#[derive(Debug, Clone)]
pub struct MeshTopology {
    vertex_count: usize,
    /// Sorted one-ring neighbor ids per vertex.
    neighbors: Vec<Vec<usize>>,
    /// Edge weight aligned with `neighbors` (weight of edge (i, neighbors[i][k])).
    neighbor_weights: Vec<Vec<f64>>,
    /// Undirected edges (v0 < v1) in lexicographic order.
    edges: Vec<[usize; 2]>,
    /// Triangles incident to each edge.
    edge_triangles: Vec<Vec<usize>>,
    /// Weight per edge, aligned with `edges`.
    edge_weights: Vec<f64>,
    weighting: Weighting,
}

impl MeshTopology {
    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn neighbors(&self, vertex: usize) -> &[usize] {
        &self.neighbors[vertex]
    }

    /// Neighbor ids of `vertex` zipped with the corresponding edge weights.
    pub fn neighbors_with_weights(&self, vertex: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbors[vertex]
            .iter()
            .copied()
            .zip(self.neighbor_weights[vertex].iter().copied())
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_triangles(&self, edge: usize) -> &[usize] {
        &self.edge_triangles[edge]
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }
}

/// Compute one-ring adjacency and edge weights.
///
/// Uniform weighting sets every edge weight to 1. Cotangent weighting sums
/// `cot` of the angles opposite the edge over the 1 or 2 incident triangles,
/// halves the sum, and clamps to [`MIN_COTANGENT_WEIGHT`] when non-positive.
pub fn build_topology(mesh: &SurfaceMesh, weighting: Weighting) -> Result<MeshTopology, MeshError> {
    let n = mesh.vertex_count();
    let edge_map = mesh.edge_map();

    let mut edges = Vec::with_capacity(edge_map.len());
    let mut edge_triangles = Vec::with_capacity(edge_map.len());
    for (&(a, b), tris) in &edge_map {
        if tris.len() > 2 {
            return Err(MeshError::NonManifoldEdge {
                v0: a,
                v1: b,
                count: tris.len(),
            });
        }
        edges.push([a, b]);
        edge_triangles.push(tris.clone());
    }

    let edge_weights: Vec<f64> = edges
        .iter()
        .zip(&edge_triangles)
        .map(|(&[a, b], tris)| match weighting {
            Weighting::Uniform => 1.0,
            Weighting::Cotangent => {
                let mut sum = 0.0;
                for &t in tris {
                    sum += cot_opposite(mesh, t, a, b);
                }
                let w = 0.5 * sum;
                if w <= 0.0 {
                    MIN_COTANGENT_WEIGHT
                } else {
                    w
                }
            }
        })
        .collect();

    let mut neighbors = vec![Vec::new(); n];
    let mut neighbor_weights = vec![Vec::new(); n];
    // edges are sorted lexicographically, so neighbor lists come out sorted.
    for (e, &[a, b]) in edges.iter().enumerate() {
        neighbors[a].push(b);
        neighbor_weights[a].push(edge_weights[e]);
        neighbors[b].push(a);
        neighbor_weights[b].push(edge_weights[e]);
    }
    for v in 0..n {
        let mut order: Vec<usize> = (0..neighbors[v].len()).collect();
        order.sort_by_key(|&k| neighbors[v][k]);
        neighbors[v] = order.iter().map(|&k| neighbors[v][k]).collect();
        neighbor_weights[v] = order.iter().map(|&k| neighbor_weights[v][k]).collect();
    }

    Ok(MeshTopology {
        vertex_count: n,
        neighbors,
        neighbor_weights,
        edges,
        edge_triangles,
        edge_weights,
        weighting,
    })
}

/// Cotangent of the angle opposite edge (a, b) inside triangle `t`.
fn cot_opposite(mesh: &SurfaceMesh, t: usize, a: usize, b: usize) -> f64 {
    let tri = mesh.triangles()[t];
    let c = tri
        .iter()
        .copied()
        .find(|&v| v != a && v != b)
        .expect("edge endpoints belong to the triangle");
    let verts = mesh.vertices();
    let ca = verts[a] - verts[c];
    let cb = verts[b] - verts[c];
    let cross = ca.cross(&cb).norm();
    ca.dot(&cb) / cross.max(1e-300)
}
