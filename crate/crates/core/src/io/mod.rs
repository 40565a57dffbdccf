//! File formats: realisation files, hyper-parameter checkpoints, datasets,
//! run configuration and CSV outputs.

mod checkpoint;
mod config;
mod csv;
mod header;
mod realisation;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{GridConfig, InferenceConfig, ModelConfig, RunConfig};
pub use csv::{
    anchored_csv, covariogram_csv, dataset_csv, exceedance_csv, kde1_csv, kde2_csv, load_dataset, parse_dataset,
    parse_values, predictive_csv, scores_csv, trace_csv,
};
pub use realisation::{load_realisations, save_realisations, RealisationFile};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn f64_at(bytes: &[u8], i: usize) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[8 * i..8 * i + 8]);
    f64::from_le_bytes(b)
}
