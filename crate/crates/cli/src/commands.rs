//! Subcommand implementations wiring the library into the batch pipeline:
//! phantom-gen -> build-template -> register -> build-sdm -> train / loocv
//! -> evaluate / sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use deforma::features::{
    collect_training_rows, sample_feature_points, LearningMode, PlanRequest, SamplingPlan,
};
use deforma::mesh::SurfaceMesh;
use deforma::metrics;
use deforma::phantom::{corrupt_for_registration, end_exhale_phase, generate_cohort};
use deforma::registration::{affine_prealign, ldsm_register, RegisteredMesh, RegistrationParams};
use deforma::regression::{
    fit_kernel_model, loocv_evaluate, organ_subset_sweep, sampling_sweep, LoocvSettings,
};
use deforma::sdm;
use deforma::template::{build_mean_template_named, resample_surface};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::artifacts::{write_atomic, write_json_atomic, write_mesh_atomic, write_resolved_config};
use crate::config::*;
use crate::csvio;
use crate::workspace::{self, GTV_TAG};
use crate::CliError;

fn module_err(e: impl std::fmt::Display) -> CliError {
    CliError::Module(e.to_string())
}

pub fn phantom_gen(config: &PhantomGenConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(out, "phantom_gen", config)?;
    let cohort = generate_cohort(&config.spec).map_err(module_err)?;
    let corrupted = corrupt_for_registration(&cohort, &config.corruption).map_err(module_err)?;
    workspace::write_phantom(out, &cohort, &corrupted)?;
    println!(
        "phantom: {} patients x {} phases, organs at {} vertices, GTV at {} -> {}",
        config.spec.patients,
        config.spec.phases,
        cohort.manifest.organ_vertex_count,
        cohort.manifest.gtv_vertex_count,
        out.display()
    );
    Ok(())
}

pub fn register_pair(
    template_path: &Path,
    target_path: &Path,
    config: &RegisterConfig,
    affine_iters: usize,
    out: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(out, "register", config)?;
    let template = workspace::load_mesh(template_path)?;
    let target = workspace::load_mesh(target_path)?;
    let registered = register_one(&template, &target, &config.to_params(), affine_iters)?;
    write_mesh_atomic(&out.join("registered.ply"), &registered.mesh)?;
    write_atomic(
        &out.join("displacement.csv"),
        &csvio::displacement_csv(&registered.displacement),
    )?;
    write_atomic(
        &out.join("energy_log.csv"),
        &csvio::energy_log_csv(&registered.energy_log),
    )?;
    let md = registered
        .energy_log
        .last()
        .map(|r| r.mean_distance)
        .unwrap_or(0.0);
    println!(
        "registered {} -> {}: MD {md:.4} mm after {} outer iterations",
        template_path.display(),
        target_path.display(),
        registered.energy_log.len()
    );
    Ok(())
}

fn register_one(
    template: &SurfaceMesh,
    target: &SurfaceMesh,
    params: &RegistrationParams,
    affine_iters: usize,
) -> Result<RegisteredMesh, CliError> {
    let (_, aligned) = affine_prealign(template, target, affine_iters).map_err(module_err)?;
    ldsm_register(&aligned, target, params).map_err(module_err)
}

/// Batch registration: every template in ws/templates onto every patient,
/// organ, and phase under ws/targets.
pub fn register_batch(
    ws: &Path,
    config: &RegisterConfig,
    affine_iters: usize,
    organs: &[String],
) -> Result<(), CliError> {
    let out_root = workspace::registered_dir(ws);
    std::fs::create_dir_all(&out_root).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out_root, "register", config)?;

    let patients = workspace::list_patients(&workspace::targets_dir(ws))?;
    let params = config.to_params();
    let mut templates: BTreeMap<String, SurfaceMesh> = BTreeMap::new();
    for tag in organs {
        let path = workspace::templates_dir(ws).join(format!("{tag}.ply"));
        templates.insert(tag.clone(), workspace::load_mesh(&path)?);
    }

    // One registration job per (patient, organ, phase); independent, so the
    // set runs in parallel and results are written in deterministic order.
    let mut jobs = Vec::new();
    for patient in &patients {
        for tag in organs {
            let dir = workspace::targets_dir(ws).join(patient).join(tag);
            let phases = workspace::count_phases(&dir)?;
            for t in 1..=phases {
                jobs.push((patient.clone(), tag.clone(), t));
            }
        }
    }
    let results: Vec<Result<(), CliError>> = jobs
        .par_iter()
        .map(|(patient, tag, t)| {
            let target = workspace::load_mesh(&workspace::phase_file(
                &workspace::targets_dir(ws).join(patient).join(tag),
                *t,
            ))?;
            let registered = register_one(&templates[tag], &target, &params, affine_iters)?;
            let dir = out_root.join(patient).join(tag);
            write_mesh_atomic(&workspace::phase_file(&dir, *t), &registered.mesh)?;
            write_atomic(
                &dir.join(format!("displacement_{t:02}.csv")),
                &csvio::displacement_csv(&registered.displacement),
            )?;
            write_atomic(
                &dir.join(format!("energy_{t:02}.csv")),
                &csvio::energy_log_csv(&registered.energy_log),
            )?;
            Ok(())
        })
        .collect();
    results.into_iter().collect::<Result<(), _>>()?;
    println!(
        "registered {} cases ({} patients x {} organs) -> {}",
        jobs.len(),
        patients.len(),
        organs.len(),
        out_root.display()
    );
    Ok(())
}

/// Build the mean template for one organ: resample the seed case's phase-1
/// target, register it to every patient's phase-1 surface, average.
pub fn build_template(
    cohort_dir: &Path,
    organ: &str,
    seed_case: &str,
    target_vertices: usize,
    config: &RegisterConfig,
    affine_iters: usize,
    out: &Path,
) -> Result<(), CliError> {
    let patients = workspace::list_patients(cohort_dir)?;
    if !patients.iter().any(|p| p == seed_case) {
        return Err(CliError::Config(format!(
            "seed case {seed_case:?} not found under {}",
            cohort_dir.display()
        )));
    }
    let load_phase1 = |patient: &str| -> Result<SurfaceMesh, CliError> {
        workspace::load_mesh(&workspace::phase_file(
            &cohort_dir.join(patient).join(organ),
            1,
        ))
    };

    let seed_mesh = load_phase1(seed_case)?;
    // The seed surface bounds the resampling budget; small structures like
    // the GTV get proportionally smaller templates.
    let budget = patients
        .iter()
        .map(|p| load_phase1(p).map(|m| m.vertex_count()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .min()
        .unwrap_or(target_vertices);
    let target = target_vertices.min(budget);
    let resampled = resample_surface(&seed_mesh, target).map_err(module_err)?;

    let params = config.to_params();
    let registered: Vec<RegisteredMesh> = patients
        .par_iter()
        .map(|patient| {
            let surface = load_phase1(patient)?;
            let mut reg = register_one(&resampled, &surface, &params, affine_iters)?;
            reg.target = patient.clone();
            Ok(reg)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let model = build_mean_template_named(&registered, organ, seed_case).map_err(module_err)?;
    write_mesh_atomic(out, &model.mesh)?;
    if let Some(parent) = out.parent() {
        write_resolved_config(parent, &format!("build_template_{organ}"), config)?;
    }
    println!(
        "template {organ}: {} vertices averaged over {} cases -> {}",
        model.mesh.vertex_count(),
        model.averaged_over.len(),
        out.display()
    );
    Ok(())
}

/// Fit per-organ deformation models and motion statistics.
pub fn build_sdm(ws: &Path, source: CohortSource, config: &SdmConfig) -> Result<(), CliError> {
    let out = workspace::sdm_dir(ws);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "build_sdm", config)?;

    let root = match source {
        CohortSource::Truth => workspace::truth_dir(ws),
        CohortSource::Registered => workspace::registered_dir(ws),
    };
    let patients = workspace::list_patients(&root)?;

    let mut motion_stats = Vec::new();
    for tag in workspace::all_tags() {
        // Per-patient displacement sequences for this structure.
        let mut cohort_fields = Vec::new();
        for patient in &patients {
            let dir = root.join(patient).join(&tag);
            let phases = workspace::count_phases(&dir)?;
            let meshes = workspace::load_sequence(&dir, phases)?;
            let fields = sdm::displacement_fields(&meshes).map_err(module_err)?;
            cohort_fields.push(fields);
        }
        let phases = cohort_fields[0].len();
        let exhale = end_exhale_phase(phases);

        // Deformation modes from the configured sample set.
        let samples: Vec<deforma::registration::DisplacementField> = match config.sample_phases {
            SamplePhases::Exhale => cohort_fields
                .iter()
                .map(|f| f[exhale - 1].clone())
                .collect(),
            SamplePhases::All => cohort_fields
                .iter()
                .flat_map(|f| f.iter().skip(1).cloned())
                .collect(),
        };
        if samples.len() >= 2 {
            let k = config.modes.min(samples.len() - 1).max(1);
            let model = sdm::fit_deformation_modes(&samples, k).map_err(module_err)?;
            sdm::save_model(&model, &out, &tag.to_lowercase()).map_err(module_err)?;
        }

        motion_stats.push(sdm::motion_statistics(&tag, &cohort_fields).map_err(module_err)?);
    }
    write_atomic(
        &out.join("motion_stats.csv"),
        &csvio::motion_stats_csv(&motion_stats),
    )?;
    println!("sdm models and motion statistics -> {}", out.display());
    Ok(())
}

fn make_plan(
    cohort: &deforma::features::CohortData,
    learn: &LearnConfig,
) -> Result<SamplingPlan, CliError> {
    sample_feature_points(
        &cohort.organ_vertex_counts(),
        &PlanRequest {
            organs: learn.organs.clone(),
            points_per_organ: learn.points_per_organ,
            seed: learn.seed,
        },
    )
    .map_err(module_err)
}

fn settings_of(learn: &LearnConfig) -> LoocvSettings {
    LoocvSettings {
        mode: learn.mode,
        beta: learn.beta,
        lambda: learn.lambda,
        dice_voxel_mm: learn.dice_voxel_mm,
    }
}

/// Fit kernel models on the full cohort and store the bundle.
pub fn train(
    ws: &Path,
    source: CohortSource,
    config: &LearnConfig,
    name: &str,
) -> Result<(), CliError> {
    let out = workspace::models_dir(ws).join(name);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "train", config)?;

    let cohort = workspace::load_cohort_data(ws, source)?;
    let plan = make_plan(&cohort, config)?;
    write_json_atomic(&out.join("plan.json"), &plan)?;

    let phases = config.resolve_phases(cohort.phases);
    for &phase in &phases {
        let rows = collect_training_rows(&cohort, &plan, phase, None).map_err(module_err)?;
        let mut csv = String::from("patient,vertex,alpha_x,alpha_y,alpha_z\n");
        match config.mode {
            LearningMode::PerRegion => {
                let y = DMatrix::from_fn(rows.len(), 3, |i, j| rows.y[i][j]);
                let model = fit_kernel_model(rows.x.clone(), &y, config.beta, config.lambda)
                    .map_err(module_err)?;
                for r in 0..rows.len() {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        rows.patient_of_row[r],
                        rows.vertex_of_row[r],
                        model.alpha()[(r, 0)],
                        model.alpha()[(r, 1)],
                        model.alpha()[(r, 2)]
                    ));
                }
            }
            LearningMode::PerPatient => {
                let n_gtv = cohort.gtv_vertex_count();
                for vi in 0..n_gtv {
                    let idx: Vec<usize> = (0..rows.len())
                        .filter(|&r| rows.vertex_of_row[r] == vi)
                        .collect();
                    let x: Vec<Vec<f64>> = idx.iter().map(|&r| rows.x[r].clone()).collect();
                    let y = DMatrix::from_fn(idx.len(), 3, |i, j| rows.y[idx[i]][j]);
                    let model =
                        fit_kernel_model(x, &y, config.beta, config.lambda).map_err(module_err)?;
                    for (i, &r) in idx.iter().enumerate() {
                        csv.push_str(&format!(
                            "{},{},{},{},{}\n",
                            rows.patient_of_row[r],
                            vi,
                            model.alpha()[(i, 0)],
                            model.alpha()[(i, 1)],
                            model.alpha()[(i, 2)]
                        ));
                    }
                }
            }
        }
        write_atomic(&out.join(format!("alpha_phase_{phase:02}.csv")), &csv)?;
    }
    println!("kernel model bundle -> {}", out.display());
    Ok(())
}

/// Predict one patient's GTV surface at one phase from its own organ data,
/// with the model fitted on the remaining patients, and score against truth.
pub fn predict(
    ws: &Path,
    source: CohortSource,
    config: &LearnConfig,
    patient: &str,
    phase: usize,
    out: &Path,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(out, "predict", config)?;
    let cohort = workspace::load_cohort_data(ws, source)?;
    let held = cohort
        .patients
        .iter()
        .position(|p| p.id == patient)
        .ok_or_else(|| CliError::Config(format!("patient {patient:?} not in cohort")))?;
    let plan = make_plan(&cohort, config)?;
    let predicted =
        deforma::regression::predict_patient_gtv(&cohort, &plan, &settings_of(config), held, phase)
            .map_err(module_err)?;
    write_mesh_atomic(
        &out.join(format!("{patient}_gtv_phase_{phase:02}.ply")),
        &predicted,
    )?;

    let truth = cohort.patients[held].gtv_mesh_at_phase(phase);
    let report = metrics::gtv_localization_error(&predicted, &truth, config.dice_voxel_mm)
        .map_err(module_err)?;
    let rows = vec![
        (patient.to_string(), phase, "MD_mm", report.mean_distance),
        (patient.to_string(), phase, "HD_mm", report.hausdorff),
        (
            patient.to_string(),
            phase,
            "LD_mean_mm",
            report.laplacian_mean,
        ),
        (
            patient.to_string(),
            phase,
            "LD_max_mm",
            report.laplacian_max,
        ),
        (patient.to_string(), phase, "DSC", report.dice),
    ];
    write_atomic(
        &out.join(format!("{patient}_gtv_phase_{phase:02}_report.csv")),
        &csvio::metric_report_csv(&rows),
    )?;
    println!(
        "predicted {patient} phase {phase}: MD {:.3} mm, HD {:.3} mm, DSC {:.3}",
        report.mean_distance, report.hausdorff, report.dice
    );
    Ok(())
}

pub fn loocv(ws: &Path, source: CohortSource, config: &LearnConfig) -> Result<(), CliError> {
    let out = workspace::eval_dir(ws);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "loocv", config)?;
    let cohort = workspace::load_cohort_data(ws, source)?;
    let plan = make_plan(&cohort, config)?;
    let phases = config.resolve_phases(cohort.phases);
    let records =
        loocv_evaluate(&cohort, &plan, &settings_of(config), &phases).map_err(module_err)?;
    let name = match config.mode {
        LearningMode::PerRegion => "loocv_per_region.csv",
        LearningMode::PerPatient => "loocv_per_patient.csv",
    };
    write_atomic(&out.join(name), &csvio::loocv_csv(&records))?;
    let mean_md = records.iter().map(|r| r.md_mm).sum::<f64>() / records.len() as f64;
    let mean_hd = records.iter().map(|r| r.hd_mm).sum::<f64>() / records.len() as f64;
    println!(
        "loocv {:?}: {} records, mean MD {mean_md:.3} mm, mean HD {mean_hd:.3} mm -> {}",
        config.mode,
        records.len(),
        out.join(name).display()
    );
    Ok(())
}

pub fn sweep_n(ws: &Path, source: CohortSource, config: &SweepNConfig) -> Result<(), CliError> {
    let out = workspace::eval_dir(ws);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "sweep_n", config)?;
    let cohort = workspace::load_cohort_data(ws, source)?;
    let phases = config.learn.resolve_phases(cohort.phases);
    let (trials, curve) = sampling_sweep(
        &cohort,
        &config.learn.organs,
        &config.counts,
        config.trials,
        &settings_of(&config.learn),
        &phases,
        config.learn.seed,
    )
    .map_err(module_err)?;
    write_atomic(
        &out.join("sweep_n_trials.csv"),
        &csvio::sweep_trials_csv(&trials),
    )?;
    write_atomic(&out.join("sweep_n.csv"), &csvio::sweep_curve_csv(&curve))?;
    println!(
        "sampling sweep over {:?} -> {}",
        config.counts,
        out.display()
    );
    Ok(())
}

pub fn sweep_subsets(
    ws: &Path,
    source: CohortSource,
    config: &SweepSubsetsConfig,
) -> Result<(), CliError> {
    let out = workspace::eval_dir(ws);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "sweep_subsets", config)?;
    let cohort = workspace::load_cohort_data(ws, source)?;
    let phases = config.learn.resolve_phases(cohort.phases);
    let table = organ_subset_sweep(
        &cohort,
        config.learn.points_per_organ,
        &settings_of(&config.learn),
        &phases,
        config.learn.seed,
    )
    .map_err(module_err)?;
    write_atomic(&out.join("subset_sweep.csv"), &csvio::subset_csv(&table))?;
    println!(
        "subset sweep: {} rows, best {} (median HD {:.3} mm) -> {}",
        table.len(),
        table[0].label(),
        table[0].median_hd_mm,
        out.display()
    );
    Ok(())
}

/// Reproduce all evaluation CSVs: motion statistics, the per-mode kernel
/// grid, the sampling-count curve, the subset ranking, and the per-phase
/// error series.
pub fn evaluate(ws: &Path, source: CohortSource, config: &EvaluateConfig) -> Result<(), CliError> {
    let out = workspace::eval_dir(ws);
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    write_resolved_config(&out, "evaluate", config)?;
    let cohort = workspace::load_cohort_data(ws, source)?;
    let phases = config.learn.resolve_phases(cohort.phases);

    // Motion dynamics over all phases (per organ and GTV).
    let root = match source {
        CohortSource::Truth => workspace::truth_dir(ws),
        CohortSource::Registered => workspace::registered_dir(ws),
    };
    let patients = workspace::list_patients(&root)?;
    let mut stats = Vec::new();
    for tag in workspace::all_tags() {
        let mut cohort_fields = Vec::new();
        for patient in &patients {
            let dir = root.join(patient).join(&tag);
            let n = workspace::count_phases(&dir)?;
            let meshes = workspace::load_sequence(&dir, n)?;
            cohort_fields.push(sdm::displacement_fields(&meshes).map_err(module_err)?);
        }
        stats.push(sdm::motion_statistics(&tag, &cohort_fields).map_err(module_err)?);
    }
    write_atomic(
        &out.join("motion_stats.csv"),
        &csvio::motion_stats_csv(&stats),
    )?;

    // Mode comparison across the kernel width grid.
    let plan = make_plan(&cohort, &config.learn)?;
    let mut grid_rows = Vec::new();
    for &beta in &config.beta_grid {
        for mode in [LearningMode::PerRegion, LearningMode::PerPatient] {
            let settings = LoocvSettings {
                mode,
                beta,
                ..settings_of(&config.learn)
            };
            let records = loocv_evaluate(&cohort, &plan, &settings, &phases).map_err(module_err)?;
            let label = match mode {
                LearningMode::PerRegion => "per_region",
                LearningMode::PerPatient => "per_patient",
            };
            grid_rows.extend(records.into_iter().map(|r| (label.to_string(), beta, r)));
        }
    }
    write_atomic(
        &out.join("loocv_grid.csv"),
        &csvio::loocv_grid_csv(&grid_rows),
    )?;

    // Sampling-count curve.
    let (trials, curve) = sampling_sweep(
        &cohort,
        &config.learn.organs,
        &config.sweep_counts,
        config.sweep_trials,
        &settings_of(&config.learn),
        &phases,
        config.learn.seed,
    )
    .map_err(module_err)?;
    write_atomic(
        &out.join("sweep_n_trials.csv"),
        &csvio::sweep_trials_csv(&trials),
    )?;
    write_atomic(&out.join("sweep_n.csv"), &csvio::sweep_curve_csv(&curve))?;

    // Organ-subset ranking.
    let table = organ_subset_sweep(
        &cohort,
        config.subset_points_per_organ,
        &settings_of(&config.learn),
        &phases,
        config.learn.seed,
    )
    .map_err(module_err)?;
    write_atomic(&out.join("subset_sweep.csv"), &csvio::subset_csv(&table))?;

    // Per-phase error curve over the full cycle with the base settings.
    let all_phases: Vec<usize> = (2..=cohort.phases).collect();
    let records = loocv_evaluate(&cohort, &plan, &settings_of(&config.learn), &all_phases)
        .map_err(module_err)?;
    write_atomic(
        &out.join("phase_error.csv"),
        &csvio::phase_error_csv(&records),
    )?;

    println!("evaluation CSVs -> {}", out.display());
    Ok(())
}

/// Default template vertex budget per structure tag: organs follow the
/// 400-vertex convention, the small GTV gets a proportional budget.
pub fn default_template_vertices(tag: &str) -> usize {
    if tag == GTV_TAG {
        32
    } else {
        400
    }
}
