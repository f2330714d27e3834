//! Batch command-line front end for the deformation-modeling pipeline:
//! phantom-gen -> build-template -> register -> build-sdm -> train / predict
//! / loocv -> evaluate and the sampling/subset sweeps.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod workspace;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{load_config, CohortSource};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("pipeline error: {0}")]
    Module(String),
}

impl CliError {
    /// Distinct exit codes: usage errors are clap's 2; configuration/schema
    /// problems are 3, I/O failures 4, module (numeric/pipeline) errors 5.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Module(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deforma",
    about = "Multi-organ deformable registration, statistical deformation models, and kernel-based target motion reconstruction"
)]
pub struct Cli {
    /// Worker threads (DEFORMA_THREADS overrides; 0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with exact ground truth plus corrupted
    /// registration targets.
    PhantomGen {
        /// Output workspace directory (DEFORMA_OUT_DIR overrides).
        #[arg(long)]
        out: PathBuf,
        /// JSON config {spec, corruption}; defaults when omitted.
        #[arg(long = "spec", alias = "config")]
        config: Option<PathBuf>,
        /// Override the master seed of both spec and corruption.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register a template onto a target (single pair), or every workspace
    /// template onto all targets (batch, with --workspace).
    Register {
        #[arg(long, conflicts_with = "workspace", requires = "target")]
        template: Option<PathBuf>,
        #[arg(long, requires = "template")]
        target: Option<PathBuf>,
        #[arg(long)]
        workspace: Option<PathBuf>,
        /// Structure tags for batch mode (default: all five organs + GTV).
        #[arg(long, value_delimiter = ',')]
        organs: Vec<String>,
        /// JSON config {delta, gamma_deform, max_outer_iters,
        /// convergence_tol, weighting, seed}.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        affine_iters: usize,
        /// Output directory (single-pair mode only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the mean template mesh for one structure.
    BuildTemplate {
        /// Structure tag: ST, DU, LI, LK, RK, or GTV.
        #[arg(long)]
        organ: String,
        /// Patient id whose phase-1 surface seeds the template.
        #[arg(long)]
        seed_case: String,
        /// Cohort directory (e.g. `<ws>/targets`).
        #[arg(long)]
        cohort: PathBuf,
        /// Vertex budget; clamped to the smallest cohort surface.
        #[arg(long)]
        target_vertices: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        affine_iters: usize,
        /// Output mesh path (.ply or .off).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit statistical deformation models and motion statistics.
    BuildSdm {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit kernel ridge models on the full cohort and store the bundle.
    Train {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bundle name under `<ws>/models/`.
        #[arg(long, default_value = "kernel")]
        name: String,
    },
    /// Predict one patient's GTV at one phase (fit on the others) and score
    /// against ground truth.
    Predict {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        phase: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out cross-validation over the cohort.
    Loocv {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Estimation error versus number of sampled points per organ.
    SweepN {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rank all 31 organ subsets by median Hausdorff distance.
    SweepSubsets {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Produce every evaluation CSV (motion stats, kernel grid, sweeps,
    /// per-phase errors).
    Evaluate {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value_t = CohortSource::Truth)]
        source: CohortSource,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Resolve the effective output directory: DEFORMA_OUT_DIR wins when set.
fn resolve_out(requested: PathBuf) -> PathBuf {
    match std::env::var_os("DEFORMA_OUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => requested,
    }
}

pub fn init_threads(requested: usize) {
    let threads = std::env::var("DEFORMA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(requested);
    if threads > 0 {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads);
    match cli.command {
        Command::PhantomGen { out, config, seed } => {
            let mut cfg: config::PhantomGenConfig = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.spec.seed = seed;
                cfg.corruption.seed = seed;
            }
            commands::phantom_gen(&cfg, &resolve_out(out))
        }
        Command::Register {
            template,
            target,
            workspace,
            organs,
            config,
            affine_iters,
            out,
        } => {
            let cfg: config::RegisterConfig = load_config(config.as_deref())?;
            match (template, workspace) {
                (Some(template), None) => {
                    let target = target.expect("clap enforces --target with --template");
                    let out = out.ok_or_else(|| {
                        CliError::Config("single-pair register needs --out".into())
                    })?;
                    commands::register_pair(
                        &template,
                        &target,
                        &cfg,
                        affine_iters,
                        &resolve_out(out),
                    )
                }
                (None, Some(ws)) => {
                    let organs = if organs.is_empty() {
                        workspace::all_tags()
                    } else {
                        organs
                    };
                    commands::register_batch(&ws, &cfg, affine_iters, &organs)
                }
                _ => Err(CliError::Config(
                    "register needs either --template/--target or --workspace".into(),
                )),
            }
        }
        Command::BuildTemplate {
            organ,
            seed_case,
            cohort,
            target_vertices,
            config,
            affine_iters,
            out,
        } => {
            let cfg: config::RegisterConfig = load_config(config.as_deref())?;
            let budget =
                target_vertices.unwrap_or_else(|| commands::default_template_vertices(&organ));
            commands::build_template(
                &cohort,
                &organ,
                &seed_case,
                budget,
                &cfg,
                affine_iters,
                &resolve_out(out),
            )
        }
        Command::BuildSdm {
            workspace,
            source,
            config,
        } => {
            let cfg: config::SdmConfig = load_config(config.as_deref())?;
            commands::build_sdm(&workspace, source, &cfg)
        }
        Command::Train {
            workspace,
            source,
            config,
            name,
        } => {
            let cfg: config::LearnConfig = load_config(config.as_deref())?;
            commands::train(&workspace, source, &cfg, &name)
        }
        Command::Predict {
            workspace,
            source,
            config,
            patient,
            phase,
            out,
        } => {
            let cfg: config::LearnConfig = load_config(config.as_deref())?;
            commands::predict(&workspace, source, &cfg, &patient, phase, &resolve_out(out))
        }
        Command::Loocv {
            workspace,
            source,
            config,
        } => {
            let cfg: config::LearnConfig = load_config(config.as_deref())?;
            commands::loocv(&workspace, source, &cfg)
        }
        Command::SweepN {
            workspace,
            source,
            config,
        } => {
            let cfg: config::SweepNConfig = load_config(config.as_deref())?;
            commands::sweep_n(&workspace, source, &cfg)
        }
        Command::SweepSubsets {
            workspace,
            source,
            config,
        } => {
            let cfg: config::SweepSubsetsConfig = load_config(config.as_deref())?;
            commands::sweep_subsets(&workspace, source, &cfg)
        }
        Command::Evaluate {
            workspace,
            source,
            config,
        } => {
            let cfg: config::EvaluateConfig = load_config(config.as_deref())?;
            commands::evaluate(&workspace, source, &cfg)
        }
    }
}
