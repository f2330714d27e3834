//! Atomic artifact writing: content goes to a sibling temp file first and is
//! renamed into place, so interrupted runs never leave half-written outputs.

use std::path::Path;

use deforma::mesh::SurfaceMesh;

use crate::CliError;

pub fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension(match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{ext}.tmp"),
        None => "tmp".to_string(),
    });
    std::fs::write(&tmp, content)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_mesh_atomic(path: &Path, mesh: &SurfaceMesh) -> Result<(), CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let text = match ext.as_str() {
        "off" => deforma::io::write_off(mesh),
        "ply" => deforma::io::write_ply(mesh),
        other => {
            return Err(CliError::Config(format!(
                "unsupported mesh extension {other:?} for {}",
                path.display()
            )))
        }
    };
    write_atomic(path, &text)
}

pub fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Every run drops the resolved configuration beside its outputs.
pub fn write_resolved_config<T: serde::Serialize>(
    out_dir: &Path,
    command: &str,
    config: &T,
) -> Result<(), CliError> {
    write_json_atomic(
        &out_dir.join(format!("resolved_config_{command}.json")),
        config,
    )
}
