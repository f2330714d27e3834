//! Statistical deformation models: per-phase displacement fields,
//! orthonormal deformation modes from singular value decomposition of the
//! centered displacement samples, mode synthesis, explained variance, and
//! motion-dynamics statistics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::SurfaceMesh;
use crate::registration::DisplacementField;

#[derive(Debug, Error)]
pub enum SdmError {
    #[error("sequence meshes do not share topology (mesh {index} differs)")]
    TopologyMismatch { index: usize },
    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("requested {requested} modes, but at most {max} are available")]
    TooManyModes { requested: usize, max: usize },
    #[error("displacement samples have inconsistent lengths ({first} vs {other})")]
    InconsistentLengths { first: usize, other: usize },
    #[error("weight count {weights} exceeds mode count {modes}")]
    WeightCountMismatch { weights: usize, modes: usize },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("model bundle i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model bundle format: {0}")]
    Format(String),
}

/// Mean displacement plus orthonormal deformation modes with eigenvalues
/// (mm^2, descending). Eigenvalue k is sigma_k^2 / (samples - 1); modes with
/// numerically zero variance are not stored, so `modes.len()` can be less
/// than `eigenvalues.len()`.
#[derive(Debug, Clone)]
pub struct DeformationModel {
    pub mean: Vec<Vector3<f64>>,
    pub modes: Vec<Vec<Vector3<f64>>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
    pub samples: usize,
    pub base_template: String,
}

/// Per-phase mean and population standard deviation of per-vertex
/// displacement magnitudes (mm), pooled over a cohort.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionDynamics {
    pub organ: String,
    pub phases: Vec<PhaseStat>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhaseStat {
    pub phase: usize,
    pub mean_mm: f64,
    pub std_mm: f64,
}

/// Displacement of each phase relative to phase 1: D_t = M_t - M_1, so D_1
/// is identically zero.
pub fn displacement_fields(sequence: &[SurfaceMesh]) -> Result<Vec<DisplacementField>, SdmError> {
    let first = sequence.first().ok_or(SdmError::EmptyCohort)?;
    for (i, mesh) in sequence.iter().enumerate().skip(1) {
        if !mesh.same_topology(first) {
            return Err(SdmError::TopologyMismatch { index: i });
        }
    }
    let base = first.name().unwrap_or("phase1").to_string();
    Ok(sequence
        .iter()
        .map(|mesh| {
            let vectors = mesh
                .vertices()
                .iter()
                .zip(first.vertices())
                .map(|(m, f)| m - f)
                .collect();
            DisplacementField::new(vectors, base.clone())
                .expect("finite vertices imply finite field")
        })
        .collect())
}

/// Fit `k` deformation modes to displacement samples via the eigenvalue
/// decomposition of the sample Gram matrix (method of snapshots, equivalent
/// to the SVD of the centered sample matrix).
pub fn fit_deformation_modes(
    displacements: &[DisplacementField],
    k: usize,
) -> Result<DeformationModel, SdmError> {
    let m = displacements.len();
    if m < 2 {
        return Err(SdmError::NotEnoughSamples { needed: 2, got: m });
    }
    if k > m - 1 {
        return Err(SdmError::TooManyModes {
            requested: k,
            max: m - 1,
        });
    }
    let n = displacements[0].len();
    for d in displacements {
        if d.len() != n {
            return Err(SdmError::InconsistentLengths {
                first: n,
                other: d.len(),
            });
        }
    }

    let mut mean = vec![Vector3::zeros(); n];
    for d in displacements {
        for (acc, v) in mean.iter_mut().zip(&d.vectors) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }

    // Centered samples as columns of a (3n x m) matrix.
    let mut centered = DMatrix::zeros(3 * n, m);
    for (j, d) in displacements.iter().enumerate() {
        for i in 0..n {
            let c = d.vectors[i] - mean[i];
            centered[(3 * i, j)] = c.x;
            centered[(3 * i + 1, j)] = c.y;
            centered[(3 * i + 2, j)] = c.z;
        }
    }

    let gram = centered.transpose() * &centered; // m x m
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let denom = (m - 1) as f64;
    let total_variance: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum::<f64>() / denom;
    let scale_tol = eig.eigenvalues[order[0]].max(0.0) * 1e-12 + 1e-30;

    let mut eigenvalues = Vec::with_capacity(k);
    let mut modes = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx].max(0.0);
        eigenvalues.push(lambda / denom);
        if lambda > scale_tol {
            let w = eig.eigenvectors.column(idx);
            let sigma = lambda.sqrt();
            let flat: DVector<f64> = (&centered * w) / sigma;
            let mode: Vec<Vector3<f64>> = (0..n)
                .map(|i| Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]))
                .collect();
            modes.push(mode);
        }
    }

    Ok(DeformationModel {
        mean,
        modes,
        eigenvalues,
        total_variance,
        samples: m,
        base_template: displacements[0].base.clone(),
    })
}

impl DeformationModel {
    pub fn vertex_count(&self) -> usize {
        self.mean.len()
    }

    /// Projection weights of a displacement sample onto the stored modes.
    pub fn project(&self, field: &DisplacementField) -> Result<Vec<f64>, SdmError> {
        if field.len() != self.mean.len() {
            return Err(SdmError::InconsistentLengths {
                first: self.mean.len(),
                other: field.len(),
            });
        }
        Ok(self
            .modes
            .iter()
            .map(|mode| {
                field
                    .vectors
                    .iter()
                    .zip(&self.mean)
                    .zip(mode)
                    .map(|((v, mu), phi)| (v - mu).dot(phi))
                    .sum()
            })
            .collect())
    }
}

/// Mean displacement plus the weighted sum of modes.
pub fn synthesize_deformation(
    model: &DeformationModel,
    weights: &[f64],
) -> Result<DisplacementField, SdmError> {
    if weights.len() > model.modes.len() {
        return Err(SdmError::WeightCountMismatch {
            weights: weights.len(),
            modes: model.modes.len(),
        });
    }
    let mut vectors = model.mean.clone();
    for (w, mode) in weights.iter().zip(&model.modes) {
        for (v, phi) in vectors.iter_mut().zip(mode) {
            *v += *w * phi;
        }
    }
    Ok(DisplacementField::new(vectors, model.base_template.clone())
        .expect("model entries are finite"))
}

/// Fraction of total variance captured by the first `k` modes. Degenerate
/// (all-zero variance) data counts as fully explained.
pub fn explained_variance(model: &DeformationModel, k: usize) -> Result<f64, SdmError> {
    if k > model.eigenvalues.len() {
        return Err(SdmError::TooManyModes {
            requested: k,
            max: model.eigenvalues.len(),
        });
    }
    if model.total_variance <= 1e-30 {
        return Ok(1.0);
    }
    let partial: f64 = model.eigenvalues.iter().take(k).sum();
    Ok(partial / model.total_variance)
}

/// Phase-resolved statistics of displacement magnitudes, pooled over all
/// vertices of all patients. Standard deviation is the population form.
pub fn motion_statistics(
    organ: &str,
    cohort: &[Vec<DisplacementField>],
) -> Result<MotionDynamics, SdmError> {
    if cohort.is_empty() {
        return Err(SdmError::EmptyCohort);
    }
    let phases = cohort[0].len();
    for seq in cohort {
        if seq.len() != phases {
            return Err(SdmError::InconsistentLengths {
                first: phases,
                other: seq.len(),
            });
        }
    }
    let mut stats = Vec::with_capacity(phases);
    for t in 0..phases {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seq in cohort {
            for v in &seq[t].vectors {
                let mag = v.norm();
                sum += mag;
                sum_sq += mag * mag;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = (sum_sq / count as f64 - mean * mean).max(0.0);
        stats.push(PhaseStat {
            phase: t + 1,
            mean_mm: mean,
            std_mm: var.sqrt(),
        });
    }
    Ok(MotionDynamics {
        organ: organ.to_string(),
        phases: stats,
    })
}

// --- model bundle serialization ---------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    base_template: String,
    samples: usize,
    vertex_count: usize,
    mode_count: usize,
    eigenvalues_mm2: Vec<f64>,
    total_variance_mm2: f64,
    mean_csv: String,
    modes_csv: String,
}

/// Write the model as a JSON manifest plus two CSV files (mean and modes)
/// under `dir`, using `stem` as the file-name prefix.
pub fn save_model(model: &DeformationModel, dir: &Path, stem: &str) -> Result<(), SdmError> {
    std::fs::create_dir_all(dir)?;
    let mean_csv = format!("{stem}_mean.csv");
    let modes_csv = format!("{stem}_modes.csv");

    let mut mean_text = String::from("vertex,mx,my,mz\n");
    for (i, v) in model.mean.iter().enumerate() {
        let _ = writeln!(mean_text, "{i},{},{},{}", v.x, v.y, v.z);
    }
    std::fs::write(dir.join(&mean_csv), mean_text)?;

    let mut header = String::from("vertex");
    for k in 0..model.modes.len() {
        let _ = write!(header, ",m{k}x,m{k}y,m{k}z");
    }
    header.push('\n');
    let mut modes_text = header;
    for i in 0..model.vertex_count() {
        let _ = write!(modes_text, "{i}");
        for mode in &model.modes {
            let v = mode[i];
            let _ = write!(modes_text, ",{},{},{}", v.x, v.y, v.z);
        }
        modes_text.push('\n');
    }
    std::fs::write(dir.join(&modes_csv), modes_text)?;

    let manifest = ModelManifest {
        base_template: model.base_template.clone(),
        samples: model.samples,
        vertex_count: model.vertex_count(),
        mode_count: model.modes.len(),
        eigenvalues_mm2: model.eigenvalues.clone(),
        total_variance_mm2: model.total_variance,
        mean_csv,
        modes_csv,
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| SdmError::Format(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}_model.json")), json)?;
    Ok(())
}

pub fn load_model(dir: &Path, stem: &str) -> Result<DeformationModel, SdmError> {
    let json = std::fs::read_to_string(dir.join(format!("{stem}_model.json")))?;
    let manifest: ModelManifest =
        serde_json::from_str(&json).map_err(|e| SdmError::Format(e.to_string()))?;

    let parse_csv = |name: &str, cols: usize| -> Result<Vec<Vec<f64>>, SdmError> {
        let text = std::fs::read_to_string(dir.join(name))?;
        let mut rows = Vec::new();
        for line in text.lines().skip(1) {
            let values: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SdmError::Format(format!("{name}: {e}")))?;
            if values.len() != cols {
                return Err(SdmError::Format(format!(
                    "{name}: expected {cols} values per row, got {}",
                    values.len()
                )));
            }
            rows.push(values);
        }
        Ok(rows)
    };

    let mean_rows = parse_csv(&manifest.mean_csv, 3)?;
    let mean: Vec<Vector3<f64>> = mean_rows
        .iter()
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect();
    let mode_rows = parse_csv(&manifest.modes_csv, 3 * manifest.mode_count)?;
    let mut modes = vec![Vec::with_capacity(manifest.vertex_count); manifest.mode_count];
    for row in &mode_rows {
        for k in 0..manifest.mode_count {
            modes[k].push(Vector3::new(row[3 * k], row[3 * k + 1], row[3 * k + 2]));
        }
    }
    Ok(DeformationModel {
        mean,
        modes,
        eigenvalues: manifest.eigenvalues_mm2,
        total_variance: manifest.total_variance_mm2,
        samples: manifest.samples,
        base_template: manifest.base_template,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(vectors: Vec<Vector3<f64>>) -> DisplacementField {
        DisplacementField::new(vectors, "base").unwrap()
    }

    #[test]
    fn displacement_fields_of_identical_sequence_are_zero() {
        let mesh = shapes::icosphere(1);
        let seq = vec![mesh.clone(), mesh.clone(), mesh];
        let fields = displacement_fields(&seq).unwrap();
        for f in &fields {
            assert!(f.vectors.iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn displacement_fields_capture_constant_shift() {
        let mesh = shapes::icosphere(1);
        let shifted = mesh.translated(Vector3::new(0.0, 0.0, 3.0));
        let fields = displacement_fields(&[mesh, shifted]).unwrap();
        assert!(fields[0].vectors.iter().all(|v| v.norm() == 0.0));
        for v in &fields[1].vectors {
            assert!((v - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn displacement_fields_reject_topology_mismatch() {
        let a = shapes::icosphere(1);
        let b = shapes::icosphere(2);
        assert!(matches!(
            displacement_fields(&[a, b]),
            Err(SdmError::TopologyMismatch { index: 1 })
        ));
    }

    #[test]
    fn identical_samples_give_zero_eigenvalues() {
        let sample = field(vec![Vector3::new(1.0, 2.0, 3.0); 10]);
        let model = fit_deformation_modes(&vec![sample.clone(); 5], 2).unwrap();
        for (mu, v) in model.mean.iter().zip(&sample.vectors) {
            assert!((mu - v).norm() < 1e-12);
        }
        assert!(model.eigenvalues.iter().all(|&l| l < 1e-20));
        assert!(model.modes.is_empty());
        assert_eq!(explained_variance(&model, 0).unwrap(), 1.0);
    }

    #[test]
    fn rank_one_family_yields_single_mode_along_direction() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let base: Vec<Vector3<f64>> = (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let samples: Vec<DisplacementField> = [-1.0, 1.0, 0.5, -0.5]
            .iter()
            .map(|&s| field(base.iter().zip(&w).map(|(b, wi)| b + s * wi).collect()))
            .collect();
        let model = fit_deformation_modes(&samples, 3).unwrap();
        assert_eq!(model.modes.len(), 1, "numerical rank is one");
        assert!(model.eigenvalues[0] > 0.0);
        assert!(model.eigenvalues[1] < 1e-15);
        // Mode parallel to w (up to sign).
        let w_norm: f64 = w.iter().map(|v| v.norm_squared()).sum::<f64>();
        let dot: f64 = model.modes[0]
            .iter()
            .zip(&w)
            .map(|(phi, wi)| phi.dot(wi))
            .sum();
        assert!((dot.abs() / w_norm.sqrt() - 1.0).abs() < 1e-10);
        assert!((explained_variance(&model, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn modes_are_orthonormal_and_eigenvalues_descend() {
        let n = 30;
        let m = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<DisplacementField> = (0..m)
            .map(|_| {
                field(
                    (0..n)
                        .map(|_| {
                            Vector3::new(
                                rng.gen_range(-2.0..2.0),
                                rng.gen_range(-2.0..2.0),
                                rng.gen_range(-2.0..2.0),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let model = fit_deformation_modes(&samples, m - 1).unwrap();
        for a in 0..model.modes.len() {
            for b in a..model.modes.len() {
                let dot: f64 = model.modes[a]
                    .iter()
                    .zip(&model.modes[b])
                    .map(|(x, y)| x.dot(y))
                    .sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-8, "modes {a},{b}: {dot}");
            }
        }
        for w in model.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(model.eigenvalues.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn training_samples_reconstruct_through_full_rank_projection() {
        let n = 25;
        let m = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let samples: Vec<DisplacementField> = (0..m)
            .map(|_| {
                field(
                    (0..n)
                        .map(|_| {
                            Vector3::new(
                                rng.gen_range(-3.0..3.0),
                                rng.gen_range(-3.0..3.0),
                                rng.gen_range(-3.0..3.0),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let model = fit_deformation_modes(&samples, m - 1).unwrap();
        for sample in &samples {
            let weights = model.project(sample).unwrap();
            let rebuilt = synthesize_deformation(&model, &weights).unwrap();
            let norm: f64 = sample.vectors.iter().map(|v| v.norm_squared()).sum::<f64>();
            let err: f64 = rebuilt
                .vectors
                .iter()
                .zip(&sample.vectors)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>();
            assert!(
                err.sqrt() <= 1e-8 * norm.sqrt().max(1.0),
                "residual {}",
                err.sqrt()
            );
        }
    }

    #[test]
    fn synthesis_with_zero_weights_returns_mean() {
        let samples: Vec<DisplacementField> = (0..4)
            .map(|k| field(vec![Vector3::new(k as f64, 0.0, 0.0); 6]))
            .collect();
        let model = fit_deformation_modes(&samples, 2).unwrap();
        let out = synthesize_deformation(&model, &[]).unwrap();
        for (a, b) in out.vectors.iter().zip(&model.mean) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn synthesis_moves_along_selected_mode() {
        let n = 8;
        let samples: Vec<DisplacementField> = (0..5)
            .map(|k| field(vec![Vector3::new(0.0, k as f64, 0.0); n]))
            .collect();
        let model = fit_deformation_modes(&samples, 2).unwrap();
        let sigma2 = 2.0 * model.eigenvalues[0].sqrt();
        let out = synthesize_deformation(&model, &[sigma2]).unwrap();
        for i in 0..n {
            let diff = out.vectors[i] - model.mean[i];
            let expected = sigma2 * model.modes[0][i];
            assert!((diff - expected).norm() < 1e-12);
        }
        // Weight count above mode count is rejected.
        assert!(synthesize_deformation(&model, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn explained_variance_matches_dense_covariance_oracle() {
        let n = 10;
        let m = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<DisplacementField> = (0..m)
            .map(|_| {
                field(
                    (0..n)
                        .map(|_| {
                            Vector3::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let model = fit_deformation_modes(&samples, m - 1).unwrap();

        // Dense covariance eigenvalues.
        let dim = 3 * n;
        let mut mean = vec![0.0; dim];
        let flat: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                s.vectors
                    .iter()
                    .flat_map(|v| [v.x, v.y, v.z])
                    .collect::<Vec<f64>>()
            })
            .collect();
        for row in &flat {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for v in &mut mean {
            *v /= m as f64;
        }
        let mut cov = DMatrix::zeros(dim, dim);
        for row in &flat {
            for i in 0..dim {
                for j in 0..dim {
                    cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]);
                }
            }
        }
        cov /= (m - 1) as f64;
        let mut dense_eigs: Vec<f64> = nalgebra::SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0))
            .collect();
        dense_eigs.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = dense_eigs.iter().sum();
        for k in 0..=3 {
            let oracle: f64 = dense_eigs.iter().take(k).sum::<f64>() / total;
            let got = explained_variance(&model, k).unwrap();
            assert!((got - oracle).abs() < 1e-10, "k={k}: {got} vs {oracle}");
        }
        assert_eq!(explained_variance(&model, 0).unwrap(), 0.0);
    }

    #[test]
    fn motion_statistics_of_constant_shifts() {
        let n = 20;
        let patient = |mags: &[f64]| -> Vec<DisplacementField> {
            mags.iter()
                .map(|&m| field(vec![Vector3::new(0.0, 0.0, m); n]))
                .collect()
        };
        // Single patient: std 0, mean = shift magnitude.
        let single = motion_statistics("ST", &[patient(&[0.0, 5.0])]).unwrap();
        assert_eq!(single.phases[0].mean_mm, 0.0);
        assert!((single.phases[1].mean_mm - 5.0).abs() < 1e-12);
        assert!(single.phases[1].std_mm < 1e-9);

        // Two patients with 4 and 8 mm: mean 6, population std 2.
        let two = motion_statistics("ST", &[patient(&[0.0, 4.0]), patient(&[0.0, 8.0])]).unwrap();
        assert!((two.phases[1].mean_mm - 6.0).abs() < 1e-12);
        assert!((two.phases[1].std_mm - 2.0).abs() < 1e-9);
    }

    #[test]
    fn motion_statistics_match_brute_force_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cohort: Vec<Vec<DisplacementField>> = (0..5)
            .map(|_| {
                (0..4)
                    .map(|_| {
                        field(
                            (0..15)
                                .map(|_| {
                                    Vector3::new(
                                        rng.gen_range(-4.0..4.0),
                                        rng.gen_range(-4.0..4.0),
                                        rng.gen_range(-4.0..4.0),
                                    )
                                })
                                .collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        let stats = motion_statistics("DU", &cohort).unwrap();
        for t in 0..4 {
            let mags: Vec<f64> = cohort
                .iter()
                .flat_map(|p| p[t].vectors.iter().map(|v| v.norm()))
                .collect();
            let mean = mags.iter().sum::<f64>() / mags.len() as f64;
            let var = mags.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / mags.len() as f64;
            assert!((stats.phases[t].mean_mm - mean).abs() < 1e-12);
            assert!((stats.phases[t].std_mm - var.sqrt()).abs() < 1e-12);
        }
        // Patient order does not matter.
        let mut reversed = cohort.clone();
        reversed.reverse();
        let stats_rev = motion_statistics("DU", &reversed).unwrap();
        for (a, b) in stats.phases.iter().zip(&stats_rev.phases) {
            assert!((a.mean_mm - b.mean_mm).abs() < 1e-12);
            assert!((a.std_mm - b.std_mm).abs() < 1e-12);
        }
    }

    #[test]
    fn model_bundle_round_trips() {
        let samples: Vec<DisplacementField> = (0..5)
            .map(|k| {
                field(
                    (0..7)
                        .map(|i| Vector3::new(k as f64 * 0.3 + i as f64, -(k as f64), 0.5))
                        .collect(),
                )
            })
            .collect();
        let model = fit_deformation_modes(&samples, 3).unwrap();
        let dir = std::env::temp_dir().join("deforma_sdm_bundle_test");
        save_model(&model, &dir, "st").unwrap();
        let back = load_model(&dir, "st").unwrap();
        assert_eq!(back.samples, model.samples);
        assert_eq!(back.eigenvalues, model.eigenvalues);
        for (a, b) in back.mean.iter().zip(&model.mean) {
            assert_eq!(a, b);
        }
        for (ma, mb) in back.modes.iter().zip(&model.modes) {
            for (a, b) in ma.iter().zip(mb) {
                assert_eq!(a, b);
            }
        }
    }
}
