//! Synthetic multi-patient, multi-phase organ/GTV cohort with analytic
//! ground-truth deformation. Organ surfaces are smoothly perturbed
//! ellipsoids; per-phase motion is a patient-specific affine (translation
//! plus rotation about the organ center) plus smooth radial bulges, all
//! scaled by a respiratory phase profile that is zero at end-inhale
//! (phase 1) and one at end-exhale (phase 6 of 10). GTV motion is a
//! configurable blend of the surrounding-organ fields, which gives the
//! organ-subset experiments a known ground truth.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Organ;
use crate::mesh::SurfaceMesh;
use crate::registration::DisplacementField;
use crate::seeding::{self, sample_normal};
use crate::shapes;
use crate::template::{self, TemplateError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("resampling failed while building phantom geometry: {0}")]
    Resample(#[from] TemplateError),
}

/// Deformation family: `General` draws independent rotations and bulges per
/// patient; `TwoParameter` restricts every patient's motion to a linear
/// combination of two fixed fields (translation profile and linearized
/// rotation), so the cohort's displacement samples span a rank-2 subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeformationFamily {
    #[default]
    General,
    TwoParameter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Mean craniocaudal amplitude per organ (mm) at end-exhale.
    pub organ_amplitude_mm: BTreeMap<Organ, f64>,
    /// Lognormal sigma of the shared per-patient breathing factor.
    pub patient_factor_sigma: f64,
    /// Std of the independent per-organ amplitude factor.
    pub organ_noise_std: f64,
    /// Std of the per-organ rotation angle (degrees).
    pub rotation_deg_std: f64,
    /// Number of moving surface bulges per organ.
    pub bulge_count: usize,
    /// Max bulge amplitude (mm).
    pub bulge_amplitude_mm: f64,
    /// Bulge kernel width range (mm).
    pub bulge_sigma_mm: (f64, f64),
    /// GTV motion = sum of these weights times the organ fields.
    pub gtv_blend: Vec<(Organ, f64)>,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            organ_amplitude_mm: [
                (Organ::Liver, 12.1),
                (Organ::Stomach, 10.3),
                (Organ::Duodenum, 10.2),
                (Organ::LeftKidney, 11.4),
                (Organ::RightKidney, 13.8),
            ]
            .into_iter()
            .collect(),
            patient_factor_sigma: 0.3,
            organ_noise_std: 0.15,
            rotation_deg_std: 5.0,
            bulge_count: 2,
            bulge_amplitude_mm: 3.0,
            bulge_sigma_mm: (9.0, 16.0),
            gtv_blend: vec![
                (Organ::Stomach, 0.34),
                (Organ::Duodenum, 0.33),
                (Organ::LeftKidney, 0.08),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub patients: usize,
    pub phases: usize,
    pub vertices_per_organ: usize,
    pub gtv_vertices: usize,
    pub organ_shapes: BTreeMap<Organ, ShapeSpec>,
    pub gtv_shape: ShapeSpec,
    /// Amplitude of the phase-independent inter-patient shape variation (mm).
    pub shape_variation_mm: f64,
    pub motion: MotionSpec,
    pub family: DeformationFamily,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            patients: 25,
            phases: 10,
            vertices_per_organ: 642,
            gtv_vertices: 42,
            organ_shapes: default_anatomy(),
            gtv_shape: ShapeSpec {
                center_mm: [2.0, -8.0, 2.0],
                semi_axes_mm: [13.0, 10.0, 15.0],
            },
            shape_variation_mm: 2.0,
            motion: MotionSpec::default(),
            family: DeformationFamily::General,
            seed: 0,
        }
    }
}

/// Rough anatomical layout: liver superior-right, kidneys posterior-lateral,
/// stomach and duodenum adjacent to the GTV near the pancreas head.
pub fn default_anatomy() -> BTreeMap<Organ, ShapeSpec> {
    [
        (
            Organ::Liver,
            ShapeSpec {
                center_mm: [-60.0, 10.0, 45.0],
                semi_axes_mm: [62.0, 50.0, 42.0],
            },
        ),
        (
            Organ::Stomach,
            ShapeSpec {
                center_mm: [38.0, -18.0, 22.0],
                semi_axes_mm: [44.0, 30.0, 26.0],
            },
        ),
        (
            Organ::Duodenum,
            ShapeSpec {
                center_mm: [12.0, -2.0, -8.0],
                semi_axes_mm: [24.0, 18.0, 30.0],
            },
        ),
        (
            Organ::LeftKidney,
            ShapeSpec {
                center_mm: [55.0, 35.0, -18.0],
                semi_axes_mm: [24.0, 20.0, 34.0],
            },
        ),
        (
            Organ::RightKidney,
            ShapeSpec {
                center_mm: [-55.0, 38.0, -24.0],
                semi_axes_mm: [24.0, 20.0, 34.0],
            },
        ),
    ]
    .into_iter()
    .collect()
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.patients == 0 {
            return Err(PhantomError::InvalidSpec("patients must be >= 1".into()));
        }
        if self.phases < 2 {
            return Err(PhantomError::InvalidSpec("phases must be >= 2".into()));
        }
        if self.vertices_per_organ < 12 || self.gtv_vertices < 12 {
            return Err(PhantomError::InvalidSpec(
                "organ and GTV meshes need at least 12 vertices".into(),
            ));
        }
        for organ in Organ::ALL {
            if !self.organ_shapes.contains_key(&organ) {
                return Err(PhantomError::InvalidSpec(format!(
                    "missing shape for organ {}",
                    organ.tag()
                )));
            }
            if !self.motion.organ_amplitude_mm.contains_key(&organ) {
                return Err(PhantomError::InvalidSpec(format!(
                    "missing amplitude for organ {}",
                    organ.tag()
                )));
            }
        }
        for (_, w) in &self.motion.gtv_blend {
            if !w.is_finite() || *w < 0.0 {
                return Err(PhantomError::InvalidSpec(
                    "gtv blend weights must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Respiratory profile: 0 at phase 1 (end-inhale), 1 at the mid-cycle
/// end-exhale phase, back toward 0 at the cycle end.
pub fn phase_profile(phase: usize, phases: usize) -> f64 {
    let t = (phase - 1) as f64 / phases as f64;
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * t).cos())
}

/// 1-based index of the end-exhale phase (profile maximum).
pub fn end_exhale_phase(phases: usize) -> usize {
    phases / 2 + 1
}

/// One organ's sequence: per-phase meshes in correspondence plus exact
/// ground-truth displacement fields (mesh_t = mesh_1 + field_t).
#[derive(Debug, Clone)]
pub struct OrganSequence {
    pub meshes: Vec<SurfaceMesh>,
    pub truth_fields: Vec<DisplacementField>,
}

#[derive(Debug, Clone)]
pub struct PhantomPatient {
    pub id: String,
    pub organs: BTreeMap<Organ, OrganSequence>,
    pub gtv: OrganSequence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub spec: PhantomSpec,
    pub patient_ids: Vec<String>,
    pub organ_vertex_count: usize,
    pub gtv_vertex_count: usize,
}

#[derive(Debug, Clone)]
pub struct PhantomCohort {
    pub patients: Vec<PhantomPatient>,
    pub manifest: PhantomManifest,
}

/// Analytic per-organ motion, evaluable at any point in space. This is what
/// makes GTV blending and exact ground truth possible.
#[derive(Debug, Clone)]
enum OrganMotion {
    General {
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        translation: Vector3<f64>,
        bulges: Vec<Bulge>,
    },
    TwoParameter {
        translation_field: Vector3<f64>,
        rotation_axis: Vector3<f64>, // scaled axis of the linearized rotation
        center: Vector3<f64>,
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, Copy)]
struct Bulge {
    center: Vector3<f64>,
    direction: Vector3<f64>,
    amplitude: f64,
    sigma: f64,
}

impl OrganMotion {
    /// Displacement at point `v` for profile value `p` in [0, 1].
    fn displacement(&self, v: &Point3<f64>, p: f64) -> Vector3<f64> {
        match self {
            OrganMotion::General {
                rotation,
                center,
                translation,
                bulges,
            } => {
                let r = v.coords - center;
                let mut u = rotation * r - r + translation;
                for bulge in bulges {
                    let d2 = (v.coords - bulge.center).norm_squared();
                    u += bulge.direction
                        * (bulge.amplitude * (-d2 / (2.0 * bulge.sigma * bulge.sigma)).exp());
                }
                u * p
            }
            OrganMotion::TwoParameter {
                translation_field,
                rotation_axis,
                center,
                a,
                b,
            } => {
                let r = v.coords - center;
                (translation_field * *a + rotation_axis.cross(&r) * *b) * p
            }
        }
    }
}

/// Generate the full cohort. Deterministic: every random draw flows from
/// `spec.seed` through per-patient derived streams.
pub fn generate_cohort(spec: &PhantomSpec) -> Result<PhantomCohort, PhantomError> {
    spec.validate()?;

    // Shared base geometry (one decimated unit sphere per vertex budget).
    let organ_base = unit_sphere_with(spec.vertices_per_organ)?;
    let gtv_base = unit_sphere_with(spec.gtv_vertices)?;

    let patients: Vec<PhantomPatient> = (0..spec.patients)
        .map(|k| generate_patient(spec, k, &organ_base, &gtv_base))
        .collect::<Result<_, _>>()?;

    let manifest = PhantomManifest {
        spec: spec.clone(),
        patient_ids: patients.iter().map(|p| p.id.clone()).collect(),
        organ_vertex_count: organ_base.vertex_count(),
        gtv_vertex_count: gtv_base.vertex_count(),
    };
    Ok(PhantomCohort { patients, manifest })
}

fn unit_sphere_with(vertices: usize) -> Result<SurfaceMesh, PhantomError> {
    // Smallest icosphere with at least the requested vertex count.
    let mut subdivisions = 0;
    while 10 * 4usize.pow(subdivisions) + 2 < vertices {
        subdivisions += 1;
    }
    let sphere = shapes::icosphere(subdivisions as usize);
    Ok(template::resample_surface(&sphere, vertices)?)
}

fn ellipsoid(base: &SurfaceMesh, shape: &ShapeSpec) -> SurfaceMesh {
    let center = Vector3::from(shape.center_mm);
    let axes = Vector3::from(shape.semi_axes_mm);
    let verts: Vec<Point3<f64>> = base
        .vertices()
        .iter()
        .map(|p| Point3::new(p.x * axes.x, p.y * axes.y, p.z * axes.z) + center)
        .collect();
    base.with_vertices(verts).expect("finite ellipsoid")
}

fn generate_patient(
    spec: &PhantomSpec,
    index: usize,
    organ_base: &SurfaceMesh,
    gtv_base: &SurfaceMesh,
) -> Result<PhantomPatient, PhantomError> {
    let id = format!("p{:02}", index + 1);
    let mut rng = seeding::rng_for(spec.seed, "phantom-patient", index as u64);

    // Shared per-patient breathing factor (lognormal, unit mean).
    let sigma = spec.motion.patient_factor_sigma;
    let breathing = (sigma * sample_normal(&mut rng) - 0.5 * sigma * sigma).exp();

    // Two-parameter family coefficients.
    let two_param_a = 1.0 + 0.3 * sample_normal(&mut rng);
    let two_param_b = sample_normal(&mut rng);

    let mut motions: BTreeMap<Organ, OrganMotion> = BTreeMap::new();
    let mut base_meshes: BTreeMap<Organ, SurfaceMesh> = BTreeMap::new();
    for organ in Organ::ALL {
        let shape = &spec.organ_shapes[&organ];
        let mut mesh = ellipsoid(organ_base, shape);
        if spec.family == DeformationFamily::General && spec.shape_variation_mm > 0.0 {
            mesh = vary_shape(&mesh, shape, spec.shape_variation_mm, &mut rng);
        }
        let motion = draw_motion(
            spec,
            organ,
            shape,
            &mesh,
            breathing,
            two_param_a,
            two_param_b,
            &mut rng,
        );
        motions.insert(organ, motion);
        base_meshes.insert(organ, mesh);
    }

    let mut gtv_mesh = ellipsoid(gtv_base, &spec.gtv_shape);
    if spec.family == DeformationFamily::General && spec.shape_variation_mm > 0.0 {
        gtv_mesh = vary_shape(
            &gtv_mesh,
            &spec.gtv_shape,
            spec.shape_variation_mm,
            &mut rng,
        );
    }

    // Per-phase sequences from the analytic fields.
    let mut organs = BTreeMap::new();
    for organ in Organ::ALL {
        let mesh = &base_meshes[&organ];
        let motion = &motions[&organ];
        let sequence = build_sequence(mesh, spec.phases, |v, p| motion.displacement(v, p));
        organs.insert(organ, sequence);
    }
    let blend = spec.motion.gtv_blend.clone();
    let gtv = build_sequence(&gtv_mesh, spec.phases, |v, p| {
        blend
            .iter()
            .map(|(organ, w)| motions[organ].displacement(v, p) * *w)
            .sum()
    });

    Ok(PhantomPatient { id, organs, gtv })
}

#[allow(clippy::too_many_arguments)]
fn draw_motion(
    spec: &PhantomSpec,
    organ: Organ,
    shape: &ShapeSpec,
    mesh: &SurfaceMesh,
    breathing: f64,
    two_param_a: f64,
    two_param_b: f64,
    rng: &mut ChaCha8Rng,
) -> OrganMotion {
    let center = Vector3::from(shape.center_mm);
    let mean_amp = spec.motion.organ_amplitude_mm[&organ];

    match spec.family {
        DeformationFamily::TwoParameter => {
            // Fixed fields: craniocaudal translation and a linearized
            // rotation about a per-organ deterministic axis.
            let axis_seed = Organ::ALL.iter().position(|&o| o == organ).unwrap() as f64;
            let axis =
                Vector3::new((axis_seed * 1.3).sin(), (axis_seed * 2.1).cos(), 0.4).normalize();
            let rot_scale = spec.motion.rotation_deg_std.to_radians();
            OrganMotion::TwoParameter {
                translation_field: Vector3::new(0.0, 0.0, -mean_amp),
                rotation_axis: axis * rot_scale,
                center,
                a: two_param_a,
                b: two_param_b,
            }
        }
        DeformationFamily::General => {
            let organ_noise = (1.0 + spec.motion.organ_noise_std * sample_normal(rng)).max(0.2);
            let amplitude = mean_amp * breathing * organ_noise;
            let dir = Vector3::new(0.15 * sample_normal(rng), 0.15 * sample_normal(rng), -1.0)
                .normalize();
            let angle = spec.motion.rotation_deg_std.to_radians() * sample_normal(rng);
            let axis = random_unit(rng);
            let rotation = *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix();
            let mut bulges = Vec::with_capacity(spec.motion.bulge_count);
            for _ in 0..spec.motion.bulge_count {
                let vertex = rng.gen_range(0..mesh.vertex_count());
                let bcenter = mesh.vertices()[vertex].coords;
                let direction = (bcenter - center).normalize();
                let amplitude_b = rng.gen_range(0.3..=spec.motion.bulge_amplitude_mm.max(0.3))
                    * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let sigma =
                    rng.gen_range(spec.motion.bulge_sigma_mm.0..=spec.motion.bulge_sigma_mm.1);
                bulges.push(Bulge {
                    center: bcenter,
                    direction,
                    amplitude: amplitude_b,
                    sigma,
                });
            }
            OrganMotion::General {
                rotation,
                center,
                translation: dir * amplitude,
                bulges,
            }
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(sample_normal(rng), sample_normal(rng), sample_normal(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Phase-independent inter-patient shape change: smooth radial bulges.
fn vary_shape(
    mesh: &SurfaceMesh,
    shape: &ShapeSpec,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> SurfaceMesh {
    let center = Vector3::from(shape.center_mm);
    let mean_axis = (shape.semi_axes_mm[0] + shape.semi_axes_mm[1] + shape.semi_axes_mm[2]) / 3.0;
    let bulges: Vec<Bulge> = (0..3)
        .map(|_| {
            let vertex = rng.gen_range(0..mesh.vertex_count());
            let bcenter = mesh.vertices()[vertex].coords;
            Bulge {
                center: bcenter,
                direction: (bcenter - center).normalize(),
                amplitude: rng.gen_range(-amplitude..=amplitude),
                sigma: rng.gen_range(0.35 * mean_axis..0.6 * mean_axis),
            }
        })
        .collect();
    let verts: Vec<Point3<f64>> = mesh
        .vertices()
        .iter()
        .map(|v| {
            let mut p = v.coords;
            for b in &bulges {
                let d2 = (v.coords - b.center).norm_squared();
                p += b.direction * (b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp());
            }
            Point3::from(p)
        })
        .collect();
    mesh.with_vertices(verts).expect("finite shape variation")
}

fn build_sequence<F>(base: &SurfaceMesh, phases: usize, field: F) -> OrganSequence
where
    F: Fn(&Point3<f64>, f64) -> Vector3<f64>,
{
    let mut meshes = Vec::with_capacity(phases);
    let mut truth_fields = Vec::with_capacity(phases);
    let base_name = base.name().unwrap_or("phase1").to_string();
    for t in 1..=phases {
        let p = phase_profile(t, phases);
        let displacements: Vec<Vector3<f64>> = base
            .vertices()
            .iter()
            .map(|v| {
                if t == 1 {
                    Vector3::zeros()
                } else {
                    field(v, p)
                }
            })
            .collect();
        let verts: Vec<Point3<f64>> = base
            .vertices()
            .iter()
            .zip(&displacements)
            .map(|(v, u)| v + u)
            .collect();
        meshes.push(base.with_vertices(verts).expect("finite deformation"));
        truth_fields
            .push(DisplacementField::new(displacements, base_name.clone()).expect("finite field"));
    }
    OrganSequence {
        meshes,
        truth_fields,
    }
}

// --- corruption for registration experiments --------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionParams {
    /// Resample each target to this fraction of its vertex count
    /// (0 keeps the original topology).
    pub resample_fraction: f64,
    /// Per-case relative variation of the resample count.
    pub count_variation: f64,
    /// Std of the per-vertex Gaussian jitter (mm).
    pub jitter_sigma_mm: f64,
    pub seed: u64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            resample_fraction: 0.75,
            count_variation: 0.03,
            jitter_sigma_mm: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorruptedPatient {
    pub id: String,
    pub organs: BTreeMap<Organ, Vec<SurfaceMesh>>,
    pub gtv: Vec<SurfaceMesh>,
}

#[derive(Debug, Clone)]
pub struct CorruptedCohort {
    pub patients: Vec<CorruptedPatient>,
}

/// Re-triangulate each target independently (breaking correspondence) and
/// add bounded vertex jitter, so registration has real work to do. Ground
/// truth stays in the original cohort for scoring.
pub fn corrupt_for_registration(
    cohort: &PhantomCohort,
    params: &CorruptionParams,
) -> Result<CorruptedCohort, PhantomError> {
    let mut patients = Vec::with_capacity(cohort.patients.len());
    for (pi, patient) in cohort.patients.iter().enumerate() {
        let mut organs = BTreeMap::new();
        for (ki, (&organ, sequence)) in patient.organs.iter().enumerate() {
            let meshes = corrupt_sequence(
                &sequence.meshes,
                params,
                seeding::derive_seed(params.seed, "corrupt", (pi * 64 + ki) as u64),
            )?;
            organs.insert(organ, meshes);
        }
        let gtv = corrupt_sequence(
            &patient.gtv.meshes,
            params,
            seeding::derive_seed(params.seed, "corrupt-gtv", pi as u64),
        )?;
        patients.push(CorruptedPatient {
            id: patient.id.clone(),
            organs,
            gtv,
        });
    }
    Ok(CorruptedCohort { patients })
}

fn corrupt_sequence(
    meshes: &[SurfaceMesh],
    params: &CorruptionParams,
    seed: u64,
) -> Result<Vec<SurfaceMesh>, PhantomError> {
    let mut out = Vec::with_capacity(meshes.len());
    for (t, mesh) in meshes.iter().enumerate() {
        let mut rng = seeding::rng_for(seed, "corrupt-phase", t as u64);
        let mut corrupted = if params.resample_fraction <= 0.0 {
            mesh.clone()
        } else {
            let n = mesh.vertex_count() as f64;
            let fraction = params.resample_fraction
                + rng.gen_range(-params.count_variation..=params.count_variation);
            let target = ((n * fraction).round() as usize)
                .min(mesh.vertex_count())
                .max(4);
            template::resample_surface(mesh, target)?
        };
        if params.jitter_sigma_mm > 0.0 {
            let verts: Vec<Point3<f64>> = corrupted
                .vertices()
                .iter()
                .map(|v| {
                    Point3::new(
                        v.x + params.jitter_sigma_mm * sample_normal(&mut rng),
                        v.y + params.jitter_sigma_mm * sample_normal(&mut rng),
                        v.z + params.jitter_sigma_mm * sample_normal(&mut rng),
                    )
                })
                .collect();
            corrupted = corrupted.with_vertices(verts).expect("finite jitter");
        }
        out.push(corrupted);
    }
    Ok(out)
}

/// Convert the cohort's exact correspondences into the learning-stage
/// [`crate::features::CohortData`] (registration bypassed; ground truth fed
/// directly).
pub fn cohort_to_training_data(cohort: &PhantomCohort) -> crate::features::CohortData {
    let patients = cohort
        .patients
        .iter()
        .map(|p| {
            let organs = p
                .organs
                .iter()
                .map(|(&organ, seq)| {
                    (
                        organ,
                        crate::features::OrganData {
                            phase1_vertices: seq.meshes[0].vertices().to_vec(),
                            displacements: seq
                                .truth_fields
                                .iter()
                                .map(|f| f.vectors.clone())
                                .collect(),
                        },
                    )
                })
                .collect();
            crate::features::PatientData {
                id: p.id.clone(),
                organs,
                gtv: crate::features::OrganData {
                    phase1_vertices: p.gtv.meshes[0].vertices().to_vec(),
                    displacements: p
                        .gtv
                        .truth_fields
                        .iter()
                        .map(|f| f.vectors.clone())
                        .collect(),
                },
                gtv_mesh: p.gtv.meshes[0].clone(),
            }
        })
        .collect();
    crate::features::CohortData::new(patients).expect("phantom cohort is non-empty and consistent")
}
