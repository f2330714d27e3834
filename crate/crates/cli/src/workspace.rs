//! Workspace directory layout and cohort loading.
//!
//! ```text
//! ws/
//!   manifest.json                     phantom spec + corruption + counts
//!   truth/<patient>/<organ>/phase_TT.ply, field_TT.csv
//!   targets/<patient>/<organ>/phase_TT.ply      (corrupted, independent)
//!   templates/<organ>.ply
//!   registered/<patient>/<organ>/phase_TT.ply, displacement_TT.csv, energy_TT.csv
//!   sdm/, eval/, models/
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deforma::features::{CohortData, Organ, OrganData, PatientData};
use deforma::mesh::SurfaceMesh;
use deforma::phantom::{CorruptedCohort, PhantomCohort, PhantomManifest};

use crate::artifacts::{write_json_atomic, write_mesh_atomic};
use crate::config::CohortSource;
use crate::csvio;
use crate::CliError;

pub const GTV_TAG: &str = "GTV";

pub fn truth_dir(ws: &Path) -> PathBuf {
    ws.join("truth")
}

pub fn targets_dir(ws: &Path) -> PathBuf {
    ws.join("targets")
}

pub fn templates_dir(ws: &Path) -> PathBuf {
    ws.join("templates")
}

pub fn registered_dir(ws: &Path) -> PathBuf {
    ws.join("registered")
}

pub fn sdm_dir(ws: &Path) -> PathBuf {
    ws.join("sdm")
}

pub fn eval_dir(ws: &Path) -> PathBuf {
    ws.join("eval")
}

pub fn models_dir(ws: &Path) -> PathBuf {
    ws.join("models")
}

pub fn phase_file(dir: &Path, phase: usize) -> PathBuf {
    dir.join(format!("phase_{phase:02}.ply"))
}

/// All organ tags in workspace order: the five feature organs plus the GTV.
pub fn all_tags() -> Vec<String> {
    let mut tags: Vec<String> = Organ::ALL.iter().map(|o| o.tag().to_string()).collect();
    tags.push(GTV_TAG.to_string());
    tags
}

pub fn load_manifest(ws: &Path) -> Result<PhantomManifest, CliError> {
    let path = ws.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
}

/// Write the generated cohort: exact truth meshes with ground-truth field
/// CSVs, corrupted targets, and the manifest.
pub fn write_phantom(
    ws: &Path,
    cohort: &PhantomCohort,
    corrupted: &CorruptedCohort,
) -> Result<(), CliError> {
    for patient in &cohort.patients {
        for (organ, sequence) in &patient.organs {
            let dir = truth_dir(ws).join(&patient.id).join(organ.tag());
            write_sequence(&dir, &sequence.meshes)?;
            for (t, field) in sequence.truth_fields.iter().enumerate() {
                crate::artifacts::write_atomic(
                    &dir.join(format!("field_{:02}.csv", t + 1)),
                    &csvio::displacement_csv(field),
                )?;
            }
        }
        let dir = truth_dir(ws).join(&patient.id).join(GTV_TAG);
        write_sequence(&dir, &patient.gtv.meshes)?;
        for (t, field) in patient.gtv.truth_fields.iter().enumerate() {
            crate::artifacts::write_atomic(
                &dir.join(format!("field_{:02}.csv", t + 1)),
                &csvio::displacement_csv(field),
            )?;
        }
    }
    for patient in &corrupted.patients {
        for (organ, meshes) in &patient.organs {
            let dir = targets_dir(ws).join(&patient.id).join(organ.tag());
            write_sequence(&dir, meshes)?;
        }
        let dir = targets_dir(ws).join(&patient.id).join(GTV_TAG);
        write_sequence(&dir, &patient.gtv)?;
    }
    write_json_atomic(&ws.join("manifest.json"), &cohort.manifest)?;
    Ok(())
}

fn write_sequence(dir: &Path, meshes: &[SurfaceMesh]) -> Result<(), CliError> {
    for (t, mesh) in meshes.iter().enumerate() {
        write_mesh_atomic(&phase_file(dir, t + 1), mesh)?;
    }
    Ok(())
}

/// Sorted patient ids below a cohort directory.
pub fn list_patients(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("listing {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        if entry
            .file_type()
            .map_err(|e| CliError::Io(e.to_string()))?
            .is_dir()
        {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!(
            "no patient directories under {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn load_mesh(path: &Path) -> Result<SurfaceMesh, CliError> {
    deforma::io::load_mesh(path)
        .map_err(|e| CliError::Module(format!("loading {}: {e}", path.display())))
}

/// Phase count of a sequence directory (contiguous phase_TT.ply files).
pub fn count_phases(dir: &Path) -> Result<usize, CliError> {
    let mut phases = 0;
    while phase_file(dir, phases + 1).exists() {
        phases += 1;
    }
    if phases == 0 {
        return Err(CliError::Config(format!(
            "no phase meshes under {}",
            dir.display()
        )));
    }
    Ok(phases)
}

pub fn load_sequence(dir: &Path, phases: usize) -> Result<Vec<SurfaceMesh>, CliError> {
    (1..=phases)
        .map(|t| load_mesh(&phase_file(dir, t)))
        .collect()
}

/// Assemble the learning-stage cohort from per-phase mesh sequences in
/// template correspondence (truth or registered). Displacements are the
/// vertexwise differences from phase 1.
pub fn load_cohort_data(ws: &Path, source: CohortSource) -> Result<CohortData, CliError> {
    let root = match source {
        CohortSource::Truth => truth_dir(ws),
        CohortSource::Registered => registered_dir(ws),
    };
    let patients = list_patients(&root)?;
    let mut out = Vec::with_capacity(patients.len());
    for id in &patients {
        let mut organs = BTreeMap::new();
        let mut phases_seen = None;
        for organ in Organ::ALL {
            let dir = root.join(id).join(organ.tag());
            let phases = count_phases(&dir)?;
            if *phases_seen.get_or_insert(phases) != phases {
                return Err(CliError::Config(format!(
                    "inconsistent phase count under {}",
                    dir.display()
                )));
            }
            let meshes = load_sequence(&dir, phases)?;
            organs.insert(organ, organ_data(&meshes)?);
        }
        let gtv_dir = root.join(id).join(GTV_TAG);
        let phases = phases_seen.expect("at least one organ");
        let gtv_meshes = load_sequence(&gtv_dir, phases)?;
        let gtv = organ_data(&gtv_meshes)?;
        out.push(PatientData {
            id: id.clone(),
            organs,
            gtv,
            gtv_mesh: gtv_meshes[0].clone(),
        });
    }
    CohortData::new(out).map_err(|e| CliError::Module(e.to_string()))
}

fn organ_data(meshes: &[SurfaceMesh]) -> Result<OrganData, CliError> {
    let first = &meshes[0];
    for (t, mesh) in meshes.iter().enumerate().skip(1) {
        if !mesh.same_topology(first) {
            return Err(CliError::Module(format!(
                "phase {} breaks template correspondence (topology differs)",
                t + 1
            )));
        }
    }
    Ok(OrganData {
        phase1_vertices: first.vertices().to_vec(),
        displacements: meshes
            .iter()
            .map(|m| {
                m.vertices()
                    .iter()
                    .zip(first.vertices())
                    .map(|(v, f)| v - f)
                    .collect()
            })
            .collect(),
    })
}
