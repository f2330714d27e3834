//! Multi-organ shape features for deformation learning.
//!
//! A feature vector for a target vertex concatenates, over the sampled
//! surrounding-organ points j, the relative position r_ij = v_i - v_j at
//! phase 1 followed by the displacement u_j of the sampled point, with organ
//! blocks in the fixed order ST, DU, LI, LK, RK. Its dimension is therefore
//! 6 x (number of sampled points).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Point3, Vector3};
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::SurfaceMesh;
use crate::seeding;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("requested {requested} points from organ {organ} with only {available} vertices")]
    CountExceedsVertices {
        organ: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("organ subset must not be empty")]
    EmptySubset,
    #[error("patient {patient} lacks organ {organ} required by the sampling plan")]
    MissingOrgan {
        patient: String,
        organ: &'static str,
    },
    #[error("phase {phase} out of range (cohort has {phases} phases)")]
    PhaseOutOfRange { phase: usize, phases: usize },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("patient {patient}: GTV has {got} vertices, expected {expected} (cohort correspondence broken)")]
    GtvMismatch {
        patient: String,
        expected: usize,
        got: usize,
    },
}

/// The five feature-source organs in their fixed feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum Organ {
    #[serde(rename = "ST")]
    Stomach,
    #[serde(rename = "DU")]
    Duodenum,
    #[serde(rename = "LI")]
    Liver,
    #[serde(rename = "LK")]
    LeftKidney,
    #[serde(rename = "RK")]
    RightKidney,
}

impl Organ {
    pub const ALL: [Organ; 5] = [
        Organ::Stomach,
        Organ::Duodenum,
        Organ::Liver,
        Organ::LeftKidney,
        Organ::RightKidney,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Organ::Stomach => "ST",
            Organ::Duodenum => "DU",
            Organ::Liver => "LI",
            Organ::LeftKidney => "LK",
            Organ::RightKidney => "RK",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Organ> {
        Organ::ALL.iter().copied().find(|o| o.tag() == tag)
    }
}

/// Registered geometry of one organ of one patient: phase-1 vertex positions
/// (template correspondence) and per-phase displacements relative to phase 1.
#[derive(Debug, Clone)]
pub struct OrganData {
    pub phase1_vertices: Vec<Point3<f64>>,
    /// `displacements[t][i]`: displacement of vertex i from phase 1 to
    /// phase t+1; `displacements[0]` is identically zero.
    pub displacements: Vec<Vec<Vector3<f64>>>,
}

impl OrganData {
    pub fn phases(&self) -> usize {
        self.displacements.len()
    }
}

/// All per-patient data the learning stage consumes.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub id: String,
    pub organs: BTreeMap<Organ, OrganData>,
    pub gtv: OrganData,
    /// Phase-1 GTV mesh; its vertices equal `gtv.phase1_vertices`.
    pub gtv_mesh: SurfaceMesh,
}

impl PatientData {
    /// Ground-truth GTV surface at the given 1-based phase.
    pub fn gtv_mesh_at_phase(&self, phase: usize) -> SurfaceMesh {
        let verts: Vec<Point3<f64>> = self
            .gtv
            .phase1_vertices
            .iter()
            .zip(&self.gtv.displacements[phase - 1])
            .map(|(p, u)| p + u)
            .collect();
        self.gtv_mesh
            .with_vertices(verts)
            .expect("phantom/registered displacements are finite")
    }
}

/// Cohort in template correspondence (per organ, shared topology).
#[derive(Debug, Clone)]
pub struct CohortData {
    pub patients: Vec<PatientData>,
    pub phases: usize,
}

impl CohortData {
    pub fn new(patients: Vec<PatientData>) -> Result<Self, FeatureError> {
        let first = patients.first().ok_or(FeatureError::EmptyCohort)?;
        let phases = first.gtv.phases();
        let gtv_n = first.gtv.phase1_vertices.len();
        for p in &patients {
            if p.gtv.phase1_vertices.len() != gtv_n {
                return Err(FeatureError::GtvMismatch {
                    patient: p.id.clone(),
                    expected: gtv_n,
                    got: p.gtv.phase1_vertices.len(),
                });
            }
        }
        Ok(Self { patients, phases })
    }

    pub fn gtv_vertex_count(&self) -> usize {
        self.patients[0].gtv.phase1_vertices.len()
    }

    /// Vertex count per organ, taken from the first patient.
    pub fn organ_vertex_counts(&self) -> BTreeMap<Organ, usize> {
        self.patients[0]
            .organs
            .iter()
            .map(|(&o, d)| (o, d.phase1_vertices.len()))
            .collect()
    }
}

/// Which organ vertices feed the feature vector. The same plan is applied to
/// every patient; correspondence is what makes a sampled id meaningful.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Non-empty subset in canonical ST, DU, LI, LK, RK order.
    pub organs: Vec<Organ>,
    pub points_per_organ: usize,
    pub sampled: BTreeMap<Organ, Vec<usize>>,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn feature_dim(&self) -> usize {
        6 * self.points_per_organ * self.organs.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRequest {
    pub organs: Vec<Organ>,
    pub points_per_organ: usize,
    pub seed: u64,
}

/// Draw `points_per_organ` vertex ids per organ, uniformly without
/// replacement and reproducibly from the seed. Organs are normalized to
/// canonical order; sampled ids are sorted.
pub fn sample_feature_points(
    organ_vertex_counts: &BTreeMap<Organ, usize>,
    request: &PlanRequest,
) -> Result<SamplingPlan, FeatureError> {
    if request.organs.is_empty() {
        return Err(FeatureError::EmptySubset);
    }
    let organs: Vec<Organ> = Organ::ALL
        .iter()
        .copied()
        .filter(|o| request.organs.contains(o))
        .collect();
    let mut sampled = BTreeMap::new();
    for (k, &organ) in organs.iter().enumerate() {
        let available = *organ_vertex_counts
            .get(&organ)
            .ok_or(FeatureError::MissingOrgan {
                patient: "(templates)".into(),
                organ: organ.tag(),
            })?;
        if request.points_per_organ > available {
            return Err(FeatureError::CountExceedsVertices {
                organ: organ.tag(),
                requested: request.points_per_organ,
                available,
            });
        }
        let mut rng = seeding::rng_for(request.seed, "sampling-plan", k as u64);
        let mut ids: Vec<usize> = if request.points_per_organ == available {
            (0..available).collect()
        } else {
            index_sample(&mut rng, available, request.points_per_organ).into_vec()
        };
        ids.sort_unstable();
        sampled.insert(organ, ids);
    }
    Ok(SamplingPlan {
        organs,
        points_per_organ: request.points_per_organ,
        sampled,
        seed: request.seed,
    })
}

/// Feature vector of one target vertex against one patient-phase: for each
/// sampled point j append v_i - v_j (phase-1 positions) then u_j (phase-1 to
/// `phase` displacement).
pub fn build_feature_vector(
    target_position: &Point3<f64>,
    plan: &SamplingPlan,
    patient: &PatientData,
    phase: usize,
) -> Result<Vec<f64>, FeatureError> {
    let mut x = Vec::with_capacity(plan.feature_dim());
    for organ in &plan.organs {
        let data = patient
            .organs
            .get(organ)
            .ok_or(FeatureError::MissingOrgan {
                patient: patient.id.clone(),
                organ: organ.tag(),
            })?;
        if phase < 1 || phase > data.phases() {
            return Err(FeatureError::PhaseOutOfRange {
                phase,
                phases: data.phases(),
            });
        }
        let displacement = &data.displacements[phase - 1];
        for &j in &plan.sampled[organ] {
            let r = target_position - data.phase1_vertices[j];
            let u = displacement[j];
            x.extend_from_slice(&[r.x, r.y, r.z, u.x, u.y, u.z]);
        }
    }
    Ok(x)
}

/// Training regime: one sample per patient for each fixed target vertex, or
/// one pooled regression over all (patient, vertex) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    PerPatient,
    PerRegion,
}

/// Rows of a training system at one phase.
#[derive(Debug, Clone)]
pub struct TrainingRows {
    /// One feature vector per row.
    pub x: Vec<Vec<f64>>,
    /// Target displacement per row.
    pub y: Vec<Vector3<f64>>,
    /// GTV vertex id per row.
    pub vertex_of_row: Vec<usize>,
    /// Patient index (into the cohort) per row.
    pub patient_of_row: Vec<usize>,
}

impl TrainingRows {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn to_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.x.len();
        let d = self.x.first().map_or(0, |r| r.len());
        let x = DMatrix::from_fn(n, d, |i, j| self.x[i][j]);
        let y = DMatrix::from_fn(n, 3, |i, j| self.y[i][j]);
        (x, y)
    }
}

/// The assembled training systems for one phase.
#[derive(Debug, Clone)]
pub enum AssembledTraining {
    /// One pooled system; N = patients x GTV vertices.
    PerRegion(TrainingRows),
    /// One system per GTV vertex; each has N = patient count.
    PerPatient(Vec<TrainingRows>),
}

/// Collect training rows at `phase` (1-based) from every cohort patient
/// except `exclude_patient`. Row order is (patient, vertex), both ascending,
/// so assembly is deterministic.
pub fn collect_training_rows(
    cohort: &CohortData,
    plan: &SamplingPlan,
    phase: usize,
    exclude_patient: Option<usize>,
) -> Result<TrainingRows, FeatureError> {
    if phase < 1 || phase > cohort.phases {
        return Err(FeatureError::PhaseOutOfRange {
            phase,
            phases: cohort.phases,
        });
    }
    let n_gtv = cohort.gtv_vertex_count();
    let mut rows = TrainingRows {
        x: Vec::new(),
        y: Vec::new(),
        vertex_of_row: Vec::new(),
        patient_of_row: Vec::new(),
    };
    for (pi, patient) in cohort.patients.iter().enumerate() {
        if Some(pi) == exclude_patient {
            continue;
        }
        for vi in 0..n_gtv {
            let target = patient.gtv.phase1_vertices[vi];
            let x = build_feature_vector(&target, plan, patient, phase)?;
            rows.x.push(x);
            rows.y.push(patient.gtv.displacements[phase - 1][vi]);
            rows.vertex_of_row.push(vi);
            rows.patient_of_row.push(pi);
        }
    }
    if rows.is_empty() {
        return Err(FeatureError::EmptyCohort);
    }
    Ok(rows)
}

/// Assemble the training systems for the chosen learning mode.
pub fn assemble_training(
    cohort: &CohortData,
    plan: &SamplingPlan,
    mode: LearningMode,
    phase: usize,
    exclude_patient: Option<usize>,
) -> Result<AssembledTraining, FeatureError> {
    let rows = collect_training_rows(cohort, plan, phase, exclude_patient)?;
    match mode {
        LearningMode::PerRegion => Ok(AssembledTraining::PerRegion(rows)),
        LearningMode::PerPatient => {
            let n_gtv = cohort.gtv_vertex_count();
            let mut per_vertex: Vec<TrainingRows> = (0..n_gtv)
                .map(|_| TrainingRows {
                    x: Vec::new(),
                    y: Vec::new(),
                    vertex_of_row: Vec::new(),
                    patient_of_row: Vec::new(),
                })
                .collect();
            for r in 0..rows.len() {
                let vi = rows.vertex_of_row[r];
                per_vertex[vi].x.push(rows.x[r].clone());
                per_vertex[vi].y.push(rows.y[r]);
                per_vertex[vi].vertex_of_row.push(vi);
                per_vertex[vi].patient_of_row.push(rows.patient_of_row[r]);
            }
            Ok(AssembledTraining::PerPatient(per_vertex))
        }
    }
}
