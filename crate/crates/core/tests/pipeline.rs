//! Cross-module pipeline tests against the phantom's analytic ground truth.

use deforma::features::{sample_feature_points, LearningMode, Organ, PlanRequest};
use deforma::metrics;
use deforma::phantom::{
    self, corrupt_for_registration, generate_cohort, CorruptionParams, PhantomSpec,
};
use deforma::registration::{affine_prealign, ldsm_register, RegistrationParams};
use deforma::regression::{loocv_evaluate, predict_patient_gtv, LoocvSettings};
use deforma::sdm;
use nalgebra::Vector3;

fn small_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        patients: 4,
        vertices_per_organ: 162,
        seed,
        ..Default::default()
    }
}

/// Registration bypassed: displacement fields computed from the phantom's
/// corresponded meshes equal the analytic ground truth.
#[test]
fn displacement_fields_match_analytic_ground_truth() {
    let cohort = generate_cohort(&small_spec(3)).unwrap();
    for patient in &cohort.patients {
        let seq = &patient.organs[&Organ::Duodenum];
        let fields = sdm::displacement_fields(&seq.meshes).unwrap();
        for (computed, truth) in fields.iter().zip(&seq.truth_fields) {
            for (a, b) in computed.vectors.iter().zip(&truth.vectors) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }
}

/// Register the phantom's own phase-1 mesh onto the corrupted end-exhale
/// target and compare the recovered displacement with the analytic field.
/// The noise floor combines the corruption amplitude (3 sigma of the jitter)
/// with the correspondence resolution of the surfaces (half the mean edge
/// length covers tangential sliding).
#[test]
fn registration_recovers_phantom_displacement_field() {
    let spec = PhantomSpec {
        patients: 2,
        seed: 21,
        ..Default::default()
    };
    let corruption = CorruptionParams {
        seed: 21,
        ..Default::default()
    };
    let cohort = generate_cohort(&spec).unwrap();
    let corrupted = corrupt_for_registration(&cohort, &corruption).unwrap();
    let exhale = phantom::end_exhale_phase(spec.phases) - 1;

    for (patient, targets) in cohort.patients.iter().zip(&corrupted.patients) {
        let seq = &patient.organs[&Organ::Stomach];
        let template = &seq.meshes[0];
        let target = &targets.organs[&Organ::Stomach][exhale];
        // Affine first (the CLI composes the two stages), then deformable.
        let (_, aligned) = affine_prealign(template, target, 30).unwrap();
        let registered = ldsm_register(&aligned, target, &RegistrationParams::default()).unwrap();

        // Total recovered displacement relative to the original template.
        let truth = &seq.truth_fields[exhale];
        let mean_error: f64 = registered
            .mesh
            .vertices()
            .iter()
            .zip(template.vertices())
            .zip(&truth.vectors)
            .map(|((v, v0), u)| ((v - v0) - u).norm())
            .sum::<f64>()
            / truth.vectors.len() as f64;
        let noise_floor = 0.5 * template.mean_edge_length() + 3.0 * corruption.jitter_sigma_mm;
        assert!(
            mean_error < noise_floor,
            "mean field error {mean_error:.3} above noise floor {noise_floor:.3}"
        );
    }
}

/// Full template pathway: resample, affine pre-align, deform, average, and
/// verify the mean template stays close to the cohort surfaces.
#[test]
fn template_pathway_produces_usable_mean_shape() {
    let cohort = generate_cohort(&small_spec(5)).unwrap();
    let corrupted = corrupt_for_registration(
        &cohort,
        &CorruptionParams {
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let organ = Organ::LeftKidney;
    let seed_mesh =
        deforma::template::resample_surface(&corrupted.patients[0].organs[&organ][0], 100).unwrap();
    let params = RegistrationParams::default();
    let registered: Vec<_> = corrupted
        .patients
        .iter()
        .map(|p| {
            let target = &p.organs[&organ][0];
            let (_, aligned) = affine_prealign(&seed_mesh, target, 20).unwrap();
            ldsm_register(&aligned, target, &params).unwrap()
        })
        .collect();
    let model = deforma::template::build_mean_template(&registered).unwrap();
    assert_eq!(model.mesh.vertex_count(), 100);
    for p in &corrupted.patients {
        let md = metrics::mean_distance(&model.mesh, &p.organs[&organ][0]);
        assert!(md < 5.0, "template drifted {md} mm from a cohort surface");
    }
}

/// A cohort of identical patients is predicted with (numerically) zero error
/// in both learning modes.
#[test]
fn loocv_on_identical_patients_has_zero_error() {
    let mut spec = small_spec(7);
    spec.patients = 1;
    let single = phantom::cohort_to_training_data(&generate_cohort(&spec).unwrap());
    let patients = (0..3)
        .map(|k| {
            let mut p = single.patients[0].clone();
            p.id = format!("p{:02}", k + 1);
            p
        })
        .collect();
    let cohort = deforma::features::CohortData::new(patients).unwrap();
    let plan = sample_feature_points(
        &cohort.organ_vertex_counts(),
        &PlanRequest {
            organs: Organ::ALL.to_vec(),
            points_per_organ: 10,
            seed: 1,
        },
    )
    .unwrap();
    for mode in [LearningMode::PerRegion, LearningMode::PerPatient] {
        // Interpolation regime: a kernel wide enough to resolve neighboring
        // vertices and a tiny ridge weight reproduce the degenerate cohort.
        let settings = LoocvSettings {
            mode,
            beta: 1e-2,
            lambda: 1e-6,
            dice_voxel_mm: 1.0,
        };
        let records = loocv_evaluate(&cohort, &plan, &settings, &[6]).unwrap();
        for r in &records {
            assert!(r.md_mm < 1e-3, "{mode:?}: md {}", r.md_mm);
            assert!(r.dice > 0.99, "{mode:?}: dice {}", r.dice);
        }
    }
}

/// The error table is reproducible from re-dumped predictions.
#[test]
fn loocv_table_matches_rescored_predictions() {
    let spec = small_spec(11);
    let cohort = phantom::cohort_to_training_data(&generate_cohort(&spec).unwrap());
    let plan = sample_feature_points(
        &cohort.organ_vertex_counts(),
        &PlanRequest {
            organs: Organ::ALL.to_vec(),
            points_per_organ: 15,
            seed: 2,
        },
    )
    .unwrap();
    let settings = LoocvSettings {
        mode: LearningMode::PerRegion,
        beta: 3.0e-5,
        lambda: 1e-3,
        dice_voxel_mm: 1.0,
    };
    let phases = vec![4, 6];
    let records = loocv_evaluate(&cohort, &plan, &settings, &phases).unwrap();
    for record in &records {
        let held = cohort
            .patients
            .iter()
            .position(|p| p.id == record.patient)
            .unwrap();
        let predicted = predict_patient_gtv(&cohort, &plan, &settings, held, record.phase).unwrap();
        let truth = cohort.patients[held].gtv_mesh_at_phase(record.phase);
        let md = metrics::mean_distance(&predicted, &truth);
        let hd = metrics::hausdorff_distance(&predicted, &truth);
        assert!((md - record.md_mm).abs() < 1e-9);
        assert!((hd - record.hd_mm).abs() < 1e-9);
    }
}

/// Mode synthesis at +/- 2 sqrt(lambda) spans shapes around the mean, the
/// usual way deformation modes are visualized.
#[test]
fn mode_synthesis_spans_plausible_deformations() {
    let cohort = generate_cohort(&small_spec(13)).unwrap();
    let samples: Vec<_> = cohort
        .patients
        .iter()
        .flat_map(|p| {
            p.organs[&Organ::Stomach]
                .truth_fields
                .iter()
                .skip(1)
                .cloned()
        })
        .collect();
    let model = sdm::fit_deformation_modes(&samples, 2).unwrap();
    let sigma = 2.0 * model.eigenvalues[0].sqrt();
    let plus = sdm::synthesize_deformation(&model, &[sigma]).unwrap();
    let minus = sdm::synthesize_deformation(&model, &[-sigma]).unwrap();
    for ((p, m), mu) in plus.vectors.iter().zip(&minus.vectors).zip(&model.mean) {
        let mid = (p + m) / 2.0;
        assert!(
            (mid - mu).norm() < 1e-10,
            "mean is the midpoint of +/- sigma"
        );
    }
    // The synthesized fields genuinely differ.
    let spread: f64 = plus
        .vectors
        .iter()
        .zip(&minus.vectors)
        .map(|(p, m)| (p - m).norm())
        .sum::<f64>()
        / plus.vectors.len() as f64;
    assert!(spread > 1e-3, "mode 1 carries no variance");
}

/// Predictions applied to the phase-1 mesh keep the GTV topology intact.
#[test]
fn predicted_gtv_mesh_preserves_topology_and_scores() {
    let spec = small_spec(17);
    let cohort = phantom::cohort_to_training_data(&generate_cohort(&spec).unwrap());
    let plan = sample_feature_points(
        &cohort.organ_vertex_counts(),
        &PlanRequest {
            organs: vec![Organ::Stomach, Organ::Duodenum],
            points_per_organ: 20,
            seed: 3,
        },
    )
    .unwrap();
    let settings = LoocvSettings {
        mode: LearningMode::PerRegion,
        beta: 3.0e-5,
        lambda: 1e-3,
        dice_voxel_mm: 1.0,
    };
    let predicted = predict_patient_gtv(&cohort, &plan, &settings, 0, 6).unwrap();
    assert!(predicted.same_topology(&cohort.patients[0].gtv_mesh));
    let truth = cohort.patients[0].gtv_mesh_at_phase(6);
    let report = metrics::gtv_localization_error(&predicted, &truth, 1.0).unwrap();
    assert!(report.dice > 0.5, "dice {}", report.dice);
    assert!(report.hausdorff >= report.mean_distance);
}

/// Rigid phantom motion (translation only) is recovered with a nearly
/// constant displacement field.
#[test]
fn rigid_phantom_motion_yields_constant_recovered_field() {
    let mut spec = small_spec(19);
    spec.patients = 1;
    spec.motion.rotation_deg_std = 0.0;
    spec.motion.bulge_count = 0;
    let cohort = generate_cohort(&spec).unwrap();
    let seq = &cohort.patients[0].organs[&Organ::RightKidney];
    let exhale = phantom::end_exhale_phase(spec.phases) - 1;
    let template = &seq.meshes[0];
    let target = &seq.meshes[exhale];
    let registered = ldsm_register(
        template,
        target,
        &RegistrationParams {
            delta: 2.0,
            max_outer_iters: 150,
            convergence_tol: 1e-5,
            ..Default::default()
        },
    )
    .unwrap();
    let mean_u: Vector3<f64> = registered.displacement.vectors.iter().sum::<Vector3<f64>>()
        / registered.displacement.len() as f64;
    let truth = &seq.truth_fields[exhale].vectors[0];
    assert!(
        (mean_u - truth).norm() < 0.3,
        "recovered mean {mean_u:?} vs truth {truth:?}"
    );
    let (l_mean, _) =
        metrics::laplacian_of_displacement(template, &registered.displacement.vectors).unwrap();
    assert!(l_mean < 0.1, "rigid motion left Laplacian {l_mean}");
}
