//! Per-command JSON configuration. Unknown keys are rejected so that typos
//! in sweep configs fail loudly instead of silently using defaults.

use deforma::features::{LearningMode, Organ};
use deforma::phantom::{CorruptionParams, PhantomSpec};
use deforma::registration::RegistrationParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomGenConfig {
    pub spec: PhantomSpec,
    pub corruption: CorruptionParams,
}

/// Registration parameters as the JSON block
/// {delta, gamma_deform, max_outer_iters, convergence_tol, weighting, seed}.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegisterConfig {
    pub delta: f64,
    pub gamma_deform: f64,
    pub max_outer_iters: usize,
    pub convergence_tol: f64,
    pub weighting: deforma::Weighting,
    pub seed: u64,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        let p = RegistrationParams::default();
        Self {
            delta: p.delta,
            gamma_deform: p.gamma_deform,
            max_outer_iters: p.max_outer_iters,
            convergence_tol: p.convergence_tol,
            weighting: p.weighting,
            seed: p.seed,
        }
    }
}

impl RegisterConfig {
    pub fn to_params(&self) -> RegistrationParams {
        RegistrationParams {
            delta: self.delta,
            gamma_deform: self.gamma_deform,
            max_outer_iters: self.max_outer_iters,
            convergence_tol: self.convergence_tol,
            weighting: self.weighting,
            seed: self.seed,
            ..RegistrationParams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    /// Exact phantom correspondences (registration bypassed).
    #[default]
    Truth,
    /// Registered meshes produced by the `register` command.
    Registered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdmConfig {
    /// Number of deformation modes to fit (clamped to samples - 1).
    pub modes: usize,
    /// "exhale" fits on the inhale-to-exhale pair; "all" pools phases 2..T.
    pub sample_phases: SamplePhases,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplePhases {
    #[default]
    Exhale,
    All,
}

impl Default for SdmConfig {
    fn default() -> Self {
        Self {
            modes: 2,
            sample_phases: SamplePhases::Exhale,
        }
    }
}

/// Learning configuration shared by train/predict/loocv:
/// {mode, beta, lambda, points_per_organ, organs, seed, phases}.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub mode: LearningMode,
    pub beta: f64,
    pub lambda: f64,
    pub points_per_organ: usize,
    pub organs: Vec<Organ>,
    pub seed: u64,
    /// 1-based phases to evaluate; empty means 2..=T.
    pub phases: Vec<usize>,
    pub dice_voxel_mm: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            mode: LearningMode::PerRegion,
            beta: 3.0e-5,
            lambda: 1e-3,
            points_per_organ: 50,
            organs: Organ::ALL.to_vec(),
            seed: 0,
            phases: Vec::new(),
            dice_voxel_mm: 1.0,
        }
    }
}

impl LearnConfig {
    pub fn resolve_phases(&self, cohort_phases: usize) -> Vec<usize> {
        if self.phases.is_empty() {
            (2..=cohort_phases).collect()
        } else {
            self.phases.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepNConfig {
    pub learn: LearnConfig,
    pub counts: Vec<usize>,
    pub trials: usize,
}

impl Default for SweepNConfig {
    fn default() -> Self {
        Self {
            learn: LearnConfig {
                phases: vec![6],
                ..Default::default()
            },
            counts: vec![1, 10, 50, 100, 200, 300, 400],
            trials: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSubsetsConfig {
    pub learn: LearnConfig,
}

impl Default for SweepSubsetsConfig {
    fn default() -> Self {
        Self {
            learn: LearnConfig {
                points_per_organ: 25,
                phases: vec![6],
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub learn: LearnConfig,
    /// Kernel widths for the mode-comparison grid.
    pub beta_grid: Vec<f64>,
    pub sweep_counts: Vec<usize>,
    pub sweep_trials: usize,
    pub subset_points_per_organ: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            learn: LearnConfig {
                phases: vec![6],
                ..Default::default()
            },
            beta_grid: vec![1e-5, 1e-4, 1e-3, 1e-2],
            sweep_counts: vec![10, 100, 300, 400],
            sweep_trials: 3,
            subset_points_per_organ: 25,
        }
    }
}

/// Load a config from an optional JSON file, filling defaults when absent.
pub fn load_config<T>(path: Option<&std::path::Path>) -> Result<T, CliError>
where
    T: serde::de::DeserializeOwned + Default,
{
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
        }
    }
}
