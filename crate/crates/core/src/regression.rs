//! Gaussian reproducing-kernel ridge regression for displacement
//! reconstruction, with per-patient and per-region training, leave-one-out
//! cross-validation, and the sampling-count and organ-subset sweeps.
//!
//! The kernel is k(x_i, x_j) = exp(-beta ||x_i - x_j||^2 / N) with N the
//! number of training samples, and the fitted weights solve
//! (K + lambda I) alpha = y, the minimizer of ||y - K alpha||^2 +
//! lambda alpha^T K alpha.

use nalgebra::{DMatrix, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    assemble_training, sample_feature_points, AssembledTraining, CohortData, FeatureError,
    LearningMode, Organ, PlanRequest, SamplingPlan, TrainingRows,
};
use crate::metrics::{self, MetricsError};
use crate::seeding;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("query dimension {got} does not match training dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("lambda must be > 0, got {0}")]
    InvalidLambda(f64),
    #[error("beta must be > 0, got {0}")]
    InvalidBeta(f64),
    #[error(
        "kernel system solve broke down (diagonal condition estimate {condition_estimate:.3e})"
    )]
    SolverBreakdown { condition_estimate: f64 },
    #[error("leave-one-out needs at least 2 patients, got {0}")]
    NotEnoughPatients(usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Gaussian reproducing kernel; `n_train` is the training-set size that
/// scales the exponent.
pub fn gaussian_kernel(
    x_i: &[f64],
    x_j: &[f64],
    beta: f64,
    n_train: usize,
) -> Result<f64, RegressionError> {
    if x_i.len() != x_j.len() {
        return Err(RegressionError::DimMismatch {
            expected: x_i.len(),
            got: x_j.len(),
        });
    }
    let d2: f64 = x_i.iter().zip(x_j).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-beta * d2 / n_train as f64).exp())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fitted kernel ridge model: training features, weights, hyperparameters,
/// and the stored residual of the normal system.
#[derive(Debug, Clone)]
pub struct KernelModel {
    x: Vec<Vec<f64>>,
    alpha: DMatrix<f64>, // N x 3
    beta: f64,
    lambda: f64,
    relative_residual: f64,
}

impl KernelModel {
    pub fn training_size(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn relative_residual(&self) -> f64 {
        self.relative_residual
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// y = sum_j alpha_j k(x, x_j).
    pub fn predict(&self, x: &[f64]) -> Result<Vector3<f64>, RegressionError> {
        if x.len() != self.dim() {
            return Err(RegressionError::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let n = self.training_size();
        let mut out = Vector3::zeros();
        for j in 0..n {
            let k = (-self.beta * squared_distance(x, &self.x[j]) / n as f64).exp();
            out.x += self.alpha[(j, 0)] * k;
            out.y += self.alpha[(j, 1)] * k;
            out.z += self.alpha[(j, 2)] * k;
        }
        Ok(out)
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vector3<f64>>, RegressionError> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Symmetric kernel matrix of the training features.
pub fn kernel_matrix(x: &[Vec<f64>], beta: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    // Row-parallel fill of the lower triangle; each entry depends only on
    // its own pair of rows, so the result is bit-stable.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| (-beta * squared_distance(&x[i], &x[j]) / n as f64).exp())
                .collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Solve (K + lambda I) alpha = y and verify the relative residual.
pub fn fit_kernel_model(
    x: Vec<Vec<f64>>,
    y: &DMatrix<f64>,
    beta: f64,
    lambda: f64,
) -> Result<KernelModel, RegressionError> {
    if x.is_empty() {
        return Err(RegressionError::EmptyTraining);
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(RegressionError::InvalidLambda(lambda));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(RegressionError::InvalidBeta(beta));
    }
    let n = x.len();
    assert_eq!(y.nrows(), n, "targets must have one row per sample");

    let mut system = kernel_matrix(&x, beta);
    for i in 0..n {
        system[(i, i)] += lambda;
    }
    let max_diag = (0..n).map(|i| system[(i, i)]).fold(f64::MIN, f64::max);
    let min_diag = (0..n).map(|i| system[(i, i)]).fold(f64::MAX, f64::min);
    let chol = nalgebra::Cholesky::new(system.clone()).ok_or(RegressionError::SolverBreakdown {
        condition_estimate: max_diag / min_diag.max(f64::MIN_POSITIVE),
    })?;
    let alpha = chol.solve(y);

    let residual = (&system * &alpha - y).norm();
    let relative_residual = residual / y.norm().max(f64::MIN_POSITIVE);
    if relative_residual > 1e-8 {
        return Err(RegressionError::SolverBreakdown {
            condition_estimate: max_diag / min_diag.max(f64::MIN_POSITIVE),
        });
    }

    Ok(KernelModel {
        x,
        alpha,
        beta,
        lambda,
        relative_residual,
    })
}

fn fit_rows(rows: &TrainingRows, beta: f64, lambda: f64) -> Result<KernelModel, RegressionError> {
    let (_, y) = rows.to_matrices();
    fit_kernel_model(rows.x.clone(), &y, beta, lambda)
}

/// One leave-one-out evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoocvRecord {
    pub patient: String,
    pub phase: usize,
    pub md_mm: f64,
    pub hd_mm: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LoocvSettings {
    pub mode: LearningMode,
    pub beta: f64,
    pub lambda: f64,
    pub dice_voxel_mm: f64,
}

/// Leave-one-out cross-validation: for every held-out patient and phase, fit
/// on the remaining patients, predict all GTV vertex displacements from the
/// held-out patient's own surrounding-organ data, apply them to the held-out
/// phase-1 GTV mesh, and score against the ground-truth GTV surface.
pub fn loocv_evaluate(
    cohort: &CohortData,
    plan: &SamplingPlan,
    settings: &LoocvSettings,
    phases: &[usize],
) -> Result<Vec<LoocvRecord>, RegressionError> {
    let m = cohort.patients.len();
    if m < 2 {
        return Err(RegressionError::NotEnoughPatients(m));
    }
    let folds: Vec<(usize, usize)> = (0..m)
        .flat_map(|pi| phases.iter().map(move |&t| (pi, t)))
        .collect();
    let results: Vec<Result<LoocvRecord, RegressionError>> = folds
        .par_iter()
        .map(|&(held, phase)| evaluate_fold(cohort, plan, settings, held, phase))
        .collect();
    results.into_iter().collect()
}

fn evaluate_fold(
    cohort: &CohortData,
    plan: &SamplingPlan,
    settings: &LoocvSettings,
    held: usize,
    phase: usize,
) -> Result<LoocvRecord, RegressionError> {
    let patient = &cohort.patients[held];
    let predicted = predict_patient_gtv(cohort, plan, settings, held, phase)?;
    let truth = patient.gtv_mesh_at_phase(phase);
    let md = metrics::mean_distance(&predicted, &truth);
    let hd = metrics::hausdorff_distance(&predicted, &truth);
    let dice = metrics::dice_coefficient(&predicted, &truth, settings.dice_voxel_mm)?;
    Ok(LoocvRecord {
        patient: patient.id.clone(),
        phase,
        md_mm: md,
        hd_mm: hd,
        dice,
    })
}

/// Predicted GTV surface of `held` at `phase`, fitted on all other patients.
pub fn predict_patient_gtv(
    cohort: &CohortData,
    plan: &SamplingPlan,
    settings: &LoocvSettings,
    held: usize,
    phase: usize,
) -> Result<crate::mesh::SurfaceMesh, RegressionError> {
    let patient = &cohort.patients[held];
    let n_gtv = cohort.gtv_vertex_count();
    let queries: Vec<Vec<f64>> = (0..n_gtv)
        .map(|vi| {
            crate::features::build_feature_vector(
                &patient.gtv.phase1_vertices[vi],
                plan,
                patient,
                phase,
            )
        })
        .collect::<Result<_, _>>()?;

    let assembled = assemble_training(cohort, plan, settings.mode, phase, Some(held))?;
    let predictions: Vec<Vector3<f64>> = match assembled {
        AssembledTraining::PerRegion(rows) => {
            let model = fit_rows(&rows, settings.beta, settings.lambda)?;
            model.predict_batch(&queries)?
        }
        AssembledTraining::PerPatient(systems) => {
            let mut out = Vec::with_capacity(n_gtv);
            for (vi, rows) in systems.iter().enumerate() {
                let model = fit_rows(rows, settings.beta, settings.lambda)?;
                out.push(model.predict(&queries[vi])?);
            }
            out
        }
    };

    let verts: Vec<Point3<f64>> = patient
        .gtv
        .phase1_vertices
        .iter()
        .zip(&predictions)
        .map(|(p, u)| p + u)
        .collect();
    Ok(patient
        .gtv_mesh
        .with_vertices(verts)
        .expect("predictions are finite"))
}

/// One point of the sampling-count sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTrial {
    pub points_per_organ: usize,
    pub trial: usize,
    pub mean_md_mm: f64,
    pub mean_hd_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub points_per_organ: usize,
    pub trials: usize,
    pub mean_md_mm: f64,
    pub mean_hd_mm: f64,
}

/// Mean estimation error versus sampled points per organ, averaged over
/// seeded random sampling trials. When the count equals every organ's vertex
/// count the plan is deterministic and a single trial is run.
pub fn sampling_sweep(
    cohort: &CohortData,
    organs: &[Organ],
    counts: &[usize],
    trials: usize,
    settings: &LoocvSettings,
    phases: &[usize],
    seed: u64,
) -> Result<(Vec<SweepTrial>, Vec<SweepPoint>), RegressionError> {
    let vertex_counts = cohort.organ_vertex_counts();
    // The plan is deterministic only when every organ in the subset is
    // sampled exhaustively; requesting more than the smallest organ errors
    // out in sample_feature_points, so reaching the largest count implies
    // all counts are equal.
    let deterministic_at = organs
        .iter()
        .map(|o| vertex_counts.get(o).copied().unwrap_or(usize::MAX))
        .max()
        .unwrap_or(usize::MAX);
    let mut trial_rows = Vec::new();
    let mut curve = Vec::new();
    for &n in counts {
        let effective_trials = if n >= deterministic_at { 1 } else { trials.max(1) };
        let mut md_sum = 0.0;
        let mut hd_sum = 0.0;
        for trial in 0..effective_trials {
            let plan = sample_feature_points(
                &vertex_counts,
                &PlanRequest {
                    organs: organs.to_vec(),
                    points_per_organ: n,
                    seed: seeding::derive_seed(
                        seed,
                        "sampling-sweep",
                        (n as u64) << 16 | trial as u64,
                    ),
                },
            )?;
            let records = loocv_evaluate(cohort, &plan, settings, phases)?;
            let md = records.iter().map(|r| r.md_mm).sum::<f64>() / records.len() as f64;
            let hd = records.iter().map(|r| r.hd_mm).sum::<f64>() / records.len() as f64;
            trial_rows.push(SweepTrial {
                points_per_organ: n,
                trial,
                mean_md_mm: md,
                mean_hd_mm: hd,
            });
            md_sum += md;
            hd_sum += hd;
        }
        curve.push(SweepPoint {
            points_per_organ: n,
            trials: effective_trials,
            mean_md_mm: md_sum / effective_trials as f64,
            mean_hd_mm: hd_sum / effective_trials as f64,
        });
    }
    Ok((trial_rows, curve))
}

/// Ranking entry of the organ-subset sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsetResult {
    pub organs: Vec<Organ>,
    pub median_hd_mm: f64,
    pub median_md_mm: f64,
}

impl SubsetResult {
    pub fn label(&self) -> String {
        self.organs
            .iter()
            .map(|o| o.tag())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Evaluate LOOCV for all 31 non-empty subsets of the five organs and rank
/// them by median Hausdorff distance, ascending.
pub fn organ_subset_sweep(
    cohort: &CohortData,
    points_per_organ: usize,
    settings: &LoocvSettings,
    phases: &[usize],
    seed: u64,
) -> Result<Vec<SubsetResult>, RegressionError> {
    let vertex_counts = cohort.organ_vertex_counts();
    let masks: Vec<u32> = (1u32..32).collect();
    let results: Vec<Result<SubsetResult, RegressionError>> = masks
        .par_iter()
        .map(|&mask| {
            let organs: Vec<Organ> = Organ::ALL
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &o)| o)
                .collect();
            let plan = sample_feature_points(
                &vertex_counts,
                &PlanRequest {
                    organs: organs.clone(),
                    points_per_organ,
                    seed: seeding::derive_seed(seed, "subset-sweep", mask as u64),
                },
            )?;
            let records = loocv_evaluate(cohort, &plan, settings, phases)?;
            let mut hds: Vec<f64> = records.iter().map(|r| r.hd_mm).collect();
            let mut mds: Vec<f64> = records.iter().map(|r| r.md_mm).collect();
            Ok(SubsetResult {
                organs,
                median_hd_mm: median(&mut hds),
                median_md_mm: median(&mut mds),
            })
        })
        .collect();
    let mut table: Vec<SubsetResult> = results.into_iter().collect::<Result<_, _>>()?;
    table.sort_by(|a, b| {
        a.median_hd_mm
            .total_cmp(&b.median_hd_mm)
            .then_with(|| a.label().cmp(&b.label()))
    });
    Ok(table)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Eq.-style ridge objective ||y - K alpha||^2 + lambda alpha^T K alpha,
/// evaluated columnwise and summed. Used by optimality tests.
pub fn ridge_objective(
    k: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let fit = y - k * alpha;
    let reg = alpha.transpose() * k * alpha;
    fit.norm_squared() + lambda * reg.trace()
}
