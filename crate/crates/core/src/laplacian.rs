//! Sparse discrete Laplace operator L(v_i) = sum_j w_ij (v_i - v_j),
//! stored in compressed sparse row form. L is symmetric with zero row sums,
//! so constant fields map to zero and the operator is translation invariant.

use nalgebra::{DMatrix, Vector3};

use crate::mesh::{MeshError, SurfaceMesh};
use crate::topology::{build_topology, MeshTopology, Weighting};

#[derive(Debug, Clone)]
pub struct LaplacianOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl LaplacianOperator {
    /// Assemble L from adjacency and edge weights. Diagonal entries are the
    /// weight sums, off-diagonals are -w_ij; the sparsity pattern is exactly
    /// the one-ring adjacency plus the diagonal.
    pub fn new(topology: &MeshTopology) -> Self {
        let n = topology.vertex_count();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let mut diag = 0.0;
            let mut inserted_diag = false;
            for (j, w) in topology.neighbors_with_weights(i) {
                diag += w;
                if !inserted_diag && j > i {
                    // Placeholder; value set after the loop.
                    col_idx.push(i);
                    values.push(0.0);
                    inserted_diag = true;
                }
                col_idx.push(j);
                values.push(-w);
            }
            if !inserted_diag {
                col_idx.push(i);
                values.push(0.0);
            }
            // Patch the diagonal slot in this row.
            let start = row_ptr[row_ptr.len() - 1];
            let slot = col_idx[start..]
                .iter()
                .position(|&c| c == i)
                .expect("diagonal slot present");
            values[start + slot] = diag;
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_mesh(mesh: &SurfaceMesh, weighting: Weighting) -> Result<Self, MeshError> {
        Ok(Self::new(&build_topology(mesh, weighting)?))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// y = L x for a scalar field.
    pub fn apply_scalar(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// Componentwise application to a per-vertex 3-vector field.
    pub fn apply(&self, field: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>, MeshError> {
        if field.len() != self.n {
            return Err(MeshError::FieldLengthMismatch {
                expected: self.n,
                found: field.len(),
            });
        }
        let mut out = vec![Vector3::zeros(); self.n];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = Vector3::zeros();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * field[self.col_idx[k]];
            }
            *slot = acc;
        }
        Ok(out)
    }

    /// Row entries (column, value) of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    /// Diagonal of L^T L = L^2 (L is symmetric): sum of squared row entries.
    pub fn diag_of_squared(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v * v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn constant_field_maps_to_zero() {
        let mesh = shapes::icosphere(1);
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Cotangent).unwrap();
        let field = vec![Vector3::new(1.0, 2.0, 3.0); mesh.vertex_count()];
        let out = lap.apply(&field).unwrap();
        for v in out {
            assert!(v.norm() < 1e-10);
        }
    }

    #[test]
    fn planar_patch_interior_has_zero_normal_component() {
        let mesh = shapes::planar_grid(6);
        for weighting in [Weighting::Cotangent, Weighting::Uniform] {
            let lap = LaplacianOperator::from_mesh(&mesh, weighting).unwrap();
            let field: Vec<Vector3<f64>> = mesh.vertices().iter().map(|p| p.coords).collect();
            let out = lap.apply(&field).unwrap();
            // Interior vertices of the 6x6 grid: indices with i, j in 1..5.
            for j in 1..5 {
                for i in 1..5 {
                    let v = out[j * 6 + i];
                    assert!(v.z.abs() < 1e-12, "normal component {}", v.z);
                    if weighting == Weighting::Cotangent {
                        // Cotangent weights reproduce linear fields exactly.
                        assert!(v.norm() < 1e-10, "interior Laplacian {v:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn matches_dense_matrix_vector_product() {
        let mesh = shapes::icosahedron();
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Cotangent).unwrap();
        let dense = lap.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let field = random_field(mesh.vertex_count(), &mut rng);
        let sparse_out = lap.apply(&field).unwrap();
        for c in 0..3 {
            let x = nalgebra::DVector::from_iterator(field.len(), field.iter().map(|v| v[c]));
            let y = &dense * &x;
            for i in 0..field.len() {
                assert!((sparse_out[i][c] - y[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assembled_matrix_is_exactly_symmetric() {
        let mesh = shapes::icosphere(2);
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Cotangent).unwrap();
        let dense = lap.to_dense();
        assert_eq!(dense, dense.transpose());
    }

    #[test]
    fn translation_equivariance() {
        let mesh = shapes::icosphere(1);
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Cotangent).unwrap();
        let positions: Vec<Vector3<f64>> = mesh.vertices().iter().map(|p| p.coords).collect();
        let shifted: Vec<Vector3<f64>> = positions
            .iter()
            .map(|v| v + Vector3::new(4.2, -1.1, 0.7))
            .collect();
        let a = lap.apply(&positions).unwrap();
        let b = lap.apply(&shifted).unwrap();
        for i in 0..positions.len() {
            assert!((a[i] - b[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mesh = shapes::tetrahedron();
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Uniform).unwrap();
        let err = lap.apply(&[Vector3::zeros(); 3]).unwrap_err();
        assert!(matches!(
            err,
            MeshError::FieldLengthMismatch {
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn sparsity_pattern_matches_one_ring() {
        let mesh = shapes::icosphere(1);
        let topo = build_topology(&mesh, Weighting::Cotangent).unwrap();
        let lap = LaplacianOperator::new(&topo);
        for i in 0..mesh.vertex_count() {
            let cols: Vec<usize> = lap.row(i).map(|(j, _)| j).filter(|&j| j != i).collect();
            assert_eq!(cols, topo.neighbors(i));
        }
    }

    #[test]
    fn uniform_weighting_on_perturbed_mesh_still_zeroes_constants() {
        let base = shapes::icosphere(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let verts: Vec<Point3<f64>> = base
            .vertices()
            .iter()
            .map(|p| {
                Point3::new(
                    p.x + rng.gen_range(-0.05..0.05),
                    p.y + rng.gen_range(-0.05..0.05),
                    p.z + rng.gen_range(-0.05..0.05),
                )
            })
            .collect();
        let mesh = base.with_vertices(verts).unwrap();
        let lap = LaplacianOperator::from_mesh(&mesh, Weighting::Uniform).unwrap();
        let field = vec![Vector3::new(-2.0, 0.5, 9.0); mesh.vertex_count()];
        for v in lap.apply(&field).unwrap() {
            assert!(v.norm() < 1e-10);
        }
    }
}
