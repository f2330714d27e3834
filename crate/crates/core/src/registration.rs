//! Affine pre-alignment and deformable mesh registration.
//!
//! The deformable solver minimizes, per outer iteration,
//!
//! ```text
//! E = sum_i ||L(v'_i) - L(v_i)||^2            (shape preservation)
//!   + gamma * sum_i ||L(u_i)||^2              (deformation smoothness)
//!   + delta * sum_i ||p_i - v'_i||^2          (positional constraints)
//! ```
//!
//! where `L` is the discrete Laplacian of the original template, `v` are the
//! original template vertices, `u = v' - v` is the displacement, and `p_i`
//! are closest-point constraints on the target, re-evaluated every outer
//! iteration. `gamma = 0` is plain Laplacian shape matching (LSM); the same
//! code path serves both, the flag is the only ablation. Because the energy
//! is a quadratic form per coordinate, the inner solve is a symmetric
//! positive definite system handled by conjugate gradients.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::TriangleBvh;
use crate::laplacian::LaplacianOperator;
use crate::mesh::{MeshError, SurfaceMesh};
use crate::metrics::{mean_distance_prebuilt, MeanDistanceMode};
use crate::solver::{solve_spd, SolveError};
use crate::topology::Weighting;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid registration parameter: {0}")]
    InvalidParams(String),
    #[error("affine fit is singular (source vertices are degenerate)")]
    SingularAffine,
    #[error("linear solve failed at outer iteration {iteration}: {source}")]
    SolverFailure {
        iteration: usize,
        #[source]
        source: SolveError,
    },
    #[error("non-finite energy at outer iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },
    #[error("constraint count {constraints} does not match vertex count {vertices}")]
    SizeMismatch { constraints: usize, vertices: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Positional-constraint selection policy. Every template vertex currently
/// receives a closest-point constraint on the target, re-evaluated each
/// outer iteration; the enum leaves room for sparser policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintPolicy {
    #[default]
    AllVertices,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Weight of the positional-constraint term (dimensionless).
    pub delta: f64,
    /// Weight of the deformation-smoothness term; 0 gives plain LSM.
    pub gamma_deform: f64,
    pub max_outer_iters: usize,
    /// Convergence threshold on the change of mean distance (mm).
    pub convergence_tol: f64,
    pub weighting: Weighting,
    pub constraint_policy: ConstraintPolicy,
    pub seed: u64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            gamma_deform: 1.0,
            max_outer_iters: 50,
            convergence_tol: 1e-3,
            weighting: Weighting::Cotangent,
            constraint_policy: ConstraintPolicy::AllVertices,
            seed: 0,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(RegistrationError::InvalidParams(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !self.gamma_deform.is_finite() || self.gamma_deform < 0.0 {
            return Err(RegistrationError::InvalidParams(format!(
                "gamma_deform must be >= 0, got {}",
                self.gamma_deform
            )));
        }
        if self.max_outer_iters < 1 {
            return Err(RegistrationError::InvalidParams(
                "max_outer_iters must be >= 1".into(),
            ));
        }
        if !self.convergence_tol.is_finite() || self.convergence_tol <= 0.0 {
            return Err(RegistrationError::InvalidParams(format!(
                "convergence_tol must be > 0, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }

    /// Soft-start schedule: the constraint weight ramps linearly from
    /// delta/10 to delta over the first half of the outer iterations, which
    /// keeps early correspondences from locking in local mismatches.
    pub fn delta_at(&self, iteration: usize) -> f64 {
        let half = (self.max_outer_iters / 2).max(1);
        if iteration + 1 >= half {
            self.delta
        } else {
            let t = iteration as f64 / (half - 1).max(1) as f64;
            self.delta * (0.1 + 0.9 * t)
        }
    }
}

/// Per-vertex displacement vectors (mm) over a base mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub vectors: Vec<Vector3<f64>>,
    pub base: String,
}

impl DisplacementField {
    pub fn new(vectors: Vec<Vector3<f64>>, base: impl Into<String>) -> Result<Self, MeshError> {
        for (i, v) in vectors.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(MeshError::NonFiniteVertex { vertex: i });
            }
        }
        Ok(Self {
            vectors,
            base: base.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.vectors.iter().map(|v| v.norm()).collect()
    }
}

/// One outer iteration of the solver log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub iteration: usize,
    pub e_shape: f64,
    pub e_deform: f64,
    pub e_pos: f64,
    pub total: f64,
    pub mean_distance: f64,
    pub delta_effective: f64,
}

/// Deformed template in point-to-point correspondence with its source.
#[derive(Debug, Clone)]
pub struct RegisteredMesh {
    pub mesh: SurfaceMesh,
    pub source_template: String,
    pub target: String,
    pub displacement: DisplacementField,
    pub energy_log: Vec<EnergyRecord>,
    pub converged: bool,
}

/// 3x4 affine transform (linear part + translation).
#[derive(Debug, Clone, Copy)]
pub struct AffineTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear * p.coords + self.translation)
    }

    pub fn apply_mesh(&self, mesh: &SurfaceMesh) -> SurfaceMesh {
        let verts = mesh.vertices().iter().map(|p| self.apply(p)).collect();
        mesh.with_vertices(verts).expect("affine keeps finiteness")
    }
}

/// Alternating closest-point / least-squares affine alignment (affine ICP).
///
/// Correspondences are gathered in both directions: source vertices project
/// onto the target, and target vertices project onto the moved source (then
/// pull back through the current transform). The two projection biases
/// cancel, which is what lets exact affine pairs be recovered to high
/// precision. Runs `iters` rounds and returns the iterate with the best
/// mean distance, so the result is never worse than the input alignment.
pub fn affine_prealign(
    source: &SurfaceMesh,
    target: &SurfaceMesh,
    iters: usize,
) -> Result<(AffineTransform, SurfaceMesh), RegistrationError> {
    let target_bvh = TriangleBvh::new(target);
    let mut current = AffineTransform::identity();
    let mut best = current;
    let mut best_md = {
        let bvh = TriangleBvh::new(source);
        mean_distance_prebuilt(source, &bvh, target, &target_bvh, MeanDistanceMode::Pooled)
    };

    for _ in 0..iters {
        let moved_mesh = current.apply_mesh(source);
        let moved_bvh = TriangleBvh::new(&moved_mesh);

        let mut pairs_src: Vec<Point3<f64>> =
            Vec::with_capacity(source.vertex_count() + target.vertex_count());
        let mut pairs_dst: Vec<Point3<f64>> = Vec::with_capacity(pairs_src.capacity());
        for (v, moved) in source.vertices().iter().zip(moved_mesh.vertices()) {
            pairs_src.push(*v);
            pairs_dst.push(target_bvh.closest_point(moved).point);
        }
        if let Some(inverse) = current.linear.try_inverse() {
            for t in target.vertices() {
                let on_moved = moved_bvh.closest_point(t).point;
                let preimage = Point3::from(inverse * (on_moved.coords - current.translation));
                pairs_src.push(preimage);
                pairs_dst.push(*t);
            }
        }
        current = fit_affine(&pairs_src, &pairs_dst)?;

        let moved_mesh = current.apply_mesh(source);
        let moved_bvh = TriangleBvh::new(&moved_mesh);
        let md = mean_distance_prebuilt(
            &moved_mesh,
            &moved_bvh,
            target,
            &target_bvh,
            MeanDistanceMode::Pooled,
        );
        if md < best_md {
            best_md = md;
            best = current;
        }
    }

    // Polish with nearest-vertex correspondences. Once the surface alignment
    // is below the vertex spacing these pairs are unambiguous, which turns
    // the linear tail of surface ICP into a one-step exact fit; the result
    // is kept only while the mean distance improves.
    for _ in 0..3 {
        let moved_mesh = best.apply_mesh(source);
        let mut pairs_dst = Vec::with_capacity(source.vertex_count());
        for moved in moved_mesh.vertices() {
            let mut nearest = target.vertices()[0];
            let mut nearest_d2 = f64::INFINITY;
            for t in target.vertices() {
                let d2 = (t - moved).norm_squared();
                if d2 < nearest_d2 {
                    nearest_d2 = d2;
                    nearest = *t;
                }
            }
            pairs_dst.push(nearest);
        }
        let Ok(candidate) = fit_affine(source.vertices(), &pairs_dst) else {
            break;
        };
        let candidate_mesh = candidate.apply_mesh(source);
        let candidate_bvh = TriangleBvh::new(&candidate_mesh);
        let md = mean_distance_prebuilt(
            &candidate_mesh,
            &candidate_bvh,
            target,
            &target_bvh,
            MeanDistanceMode::Pooled,
        );
        if md < best_md {
            best_md = md;
            best = candidate;
        } else {
            break;
        }
    }

    Ok((best, best.apply_mesh(source)))
}

/// Least-squares affine mapping sources onto targets (normal equations on
/// homogeneous coordinates).
fn fit_affine(
    sources: &[Point3<f64>],
    targets: &[Point3<f64>],
) -> Result<AffineTransform, RegistrationError> {
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Matrix4x3::zeros();
    for (s, t) in sources.iter().zip(targets) {
        let h = Vector4::new(s.x, s.y, s.z, 1.0);
        ata += h * h.transpose();
        for c in 0..3 {
            for r in 0..4 {
                atb[(r, c)] += h[r] * t[c];
            }
        }
    }
    let inv = ata.try_inverse().ok_or(RegistrationError::SingularAffine)?;
    let sol = inv * atb;
    let mut linear = Matrix3::zeros();
    let mut translation = Vector3::zeros();
    for c in 0..3 {
        for r in 0..3 {
            linear[(c, r)] = sol[(r, c)];
        }
        translation[c] = sol[(3, c)];
    }
    Ok(AffineTransform {
        linear,
        translation,
    })
}

type Matrix4x3 = nalgebra::Matrix4x3<f64>;

/// Energy terms of the deformable objective at a given state.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub e_shape: f64,
    pub e_deform: f64,
    pub e_pos: f64,
    pub total: f64,
}

/// Evaluate the objective for `current` vertex positions against `template`
/// with the given constraints. The Laplacian and its target values come from
/// the original template.
pub fn evaluate_energy(
    template: &SurfaceMesh,
    current: &[Point3<f64>],
    constraints: &[Point3<f64>],
    params: &RegistrationParams,
) -> Result<EnergyBreakdown, RegistrationError> {
    let lap = LaplacianOperator::from_mesh(template, params.weighting)?;
    evaluate_energy_with(
        &lap,
        template.vertices(),
        current,
        constraints,
        params,
        params.delta,
    )
}

fn evaluate_energy_with(
    lap: &LaplacianOperator,
    template_verts: &[Point3<f64>],
    current: &[Point3<f64>],
    constraints: &[Point3<f64>],
    params: &RegistrationParams,
    delta: f64,
) -> Result<EnergyBreakdown, RegistrationError> {
    let n = template_verts.len();
    if current.len() != n {
        return Err(RegistrationError::SizeMismatch {
            constraints: current.len(),
            vertices: n,
        });
    }
    if constraints.len() != n {
        return Err(RegistrationError::SizeMismatch {
            constraints: constraints.len(),
            vertices: n,
        });
    }
    let cur_field: Vec<Vector3<f64>> = current.iter().map(|p| p.coords).collect();
    let tpl_field: Vec<Vector3<f64>> = template_verts.iter().map(|p| p.coords).collect();
    let l_cur = lap.apply(&cur_field)?;
    let l_tpl = lap.apply(&tpl_field)?;
    let e_shape: f64 = l_cur
        .iter()
        .zip(&l_tpl)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let disp: Vec<Vector3<f64>> = cur_field
        .iter()
        .zip(&tpl_field)
        .map(|(c, t)| c - t)
        .collect();
    let l_disp = lap.apply(&disp)?;
    let e_deform: f64 = l_disp.iter().map(|v| v.norm_squared()).sum();
    let e_pos: f64 = constraints
        .iter()
        .zip(current)
        .map(|(p, v)| (p - v).norm_squared())
        .sum();
    let total = e_shape + params.gamma_deform * e_deform + delta * e_pos;
    Ok(EnergyBreakdown {
        e_shape,
        e_deform,
        e_pos,
        total,
    })
}

/// Register `template` onto `target`. The caller is expected to have applied
/// affine pre-alignment already (the CLI composes the two stages).
///
/// Each outer iteration gathers closest-point constraints for every vertex,
/// solves the quadratic per coordinate, and stops once the mean distance
/// changes by less than `convergence_tol` between iterations.
pub fn ldsm_register(
    template: &SurfaceMesh,
    target: &SurfaceMesh,
    params: &RegistrationParams,
) -> Result<RegisteredMesh, RegistrationError> {
    params.validate()?;
    let n = template.vertex_count();
    let lap = LaplacianOperator::from_mesh(template, params.weighting)?;
    let target_bvh = TriangleBvh::new(target);

    let template_coords: [Vec<f64>; 3] = split_coords(template.vertices());
    // Right-hand-side shape part: (1 + gamma) L^2 v0, fixed across iterations.
    let scale = 1.0 + params.gamma_deform;
    let l2_template: [Vec<f64>; 3] = {
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        for c in 0..3 {
            lap.apply_scalar(&template_coords[c], &mut tmp);
            lap.apply_scalar(&tmp, &mut out[c]);
        }
        out
    };
    let diag_l2 = lap.diag_of_squared();

    let mut current: Vec<Point3<f64>> = template.vertices().to_vec();
    let mut current_mesh = template.clone();
    let mut md_prev = {
        let bvh = TriangleBvh::new(&current_mesh);
        mean_distance_prebuilt(
            &current_mesh,
            &bvh,
            target,
            &target_bvh,
            MeanDistanceMode::Pooled,
        )
    };

    let mut energy_log = Vec::new();
    let mut converged = false;

    for iteration in 0..params.max_outer_iters {
        let delta = params.delta_at(iteration);
        let constraints: Vec<Point3<f64>> = current
            .iter()
            .map(|p| target_bvh.closest_point(p).point)
            .collect();

        // Per-coordinate SPD solve: [(1+gamma) L^2 + delta I] x = rhs.
        let apply = |x: &[f64], y: &mut [f64]| {
            let mut tmp = vec![0.0; n];
            lap.apply_scalar(x, &mut tmp);
            let mut tmp2 = vec![0.0; n];
            lap.apply_scalar(&tmp, &mut tmp2);
            for i in 0..n {
                y[i] = scale * tmp2[i] + delta * x[i];
            }
        };
        let precond: Vec<f64> = diag_l2.iter().map(|&d| scale * d + delta).collect();

        let mut solution = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for c in 0..3 {
            let rhs: Vec<f64> = (0..n)
                .map(|i| scale * l2_template[c][i] + delta * constraints[i][c])
                .collect();
            let x0: Vec<f64> = current.iter().map(|p| p[c]).collect();
            let (x, _) = solve_spd(apply, &precond, &rhs, &x0, 1e-10, 20 * n.max(100))
                .map_err(|source| RegistrationError::SolverFailure { iteration, source })?;
            solution[c] = x;
        }
        for i in 0..n {
            current[i] = Point3::new(solution[0][i], solution[1][i], solution[2][i]);
            if !(current[i].x.is_finite() && current[i].y.is_finite() && current[i].z.is_finite()) {
                return Err(RegistrationError::NonFiniteEnergy { iteration });
            }
        }

        let energy = evaluate_energy_with(
            &lap,
            template.vertices(),
            &current,
            &constraints,
            params,
            delta,
        )?;
        if !energy.total.is_finite() {
            return Err(RegistrationError::NonFiniteEnergy { iteration });
        }

        current_mesh = current_mesh.with_vertices(current.clone())?;
        let bvh = TriangleBvh::new(&current_mesh);
        let md = mean_distance_prebuilt(
            &current_mesh,
            &bvh,
            target,
            &target_bvh,
            MeanDistanceMode::Pooled,
        );
        energy_log.push(EnergyRecord {
            iteration,
            e_shape: energy.e_shape,
            e_deform: energy.e_deform,
            e_pos: energy.e_pos,
            total: energy.total,
            mean_distance: md,
            delta_effective: delta,
        });

        if (md_prev - md).abs() < params.convergence_tol {
            converged = true;
            break;
        }
        md_prev = md;
    }

    let displacement = DisplacementField::new(
        current
            .iter()
            .zip(template.vertices())
            .map(|(c, t)| c - t)
            .collect(),
        template.name().unwrap_or("template"),
    )?;

    Ok(RegisteredMesh {
        mesh: current_mesh,
        source_template: template.name().unwrap_or("template").to_string(),
        target: target.name().unwrap_or("target").to_string(),
        displacement,
        energy_log,
        converged,
    })
}

fn split_coords(points: &[Point3<f64>]) -> [Vec<f64>; 3] {
    [
        points.iter().map(|p| p.x).collect(),
        points.iter().map(|p| p.y).collect(),
        points.iter().map(|p| p.z).collect(),
    ]
}
