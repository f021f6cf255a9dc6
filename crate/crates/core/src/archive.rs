//! Template archive: a directory holding `manifest.json` and one
//! little-endian `f32` blob per template.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templates::{Template, TemplateId, TemplateSet};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("{path}: unsupported archive format {found}")]
    Version { path: PathBuf, found: u32 },
    #[error("archive fingerprint {found} does not match configuration fingerprint {expected}")]
    Fingerprint { expected: String, found: String },
    #[error("{path}: expected {expected} bytes, found {found}")]
    BlobSize { path: PathBuf, expected: usize, found: usize },
    #[error("template {0}: stored duration disagrees with its matrix")]
    Inconsistent(TemplateId),
    #[error("cannot archive an empty template set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: TemplateId,
    pub support: usize,
    pub duration: usize,
    pub file: String,
    pub provenance: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub fingerprint: String,
    /// `[rows, cols]` shared by every template.
    pub shape: [usize; 2],
    pub full_band: bool,
    pub templates: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_archive(dir: &Path, ts: &TemplateSet, fingerprint: &str, full_band: bool) -> Result<Manifest, ArchiveError> {
    let (rows, cols) = ts.shape().ok_or(ArchiveError::Empty)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(ts.len());
    for t in &ts.templates {
        let file = format!("template_{:04}.f32", t.id);
        let mut bytes = Vec::with_capacity(t.matrix.len() * 4);
        for &v in t.matrix.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            id: t.id,
            support: t.support,
            duration: t.duration,
            file,
            provenance: ts.provenance.get(&t.id).cloned().unwrap_or_default(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        fingerprint: fingerprint.to_string(),
        shape: [rows, cols],
        full_band,
        templates: entries,
    };
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("plain data serialises");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Loads an archive, refusing it when `expected_fingerprint` is given and
/// differs from the stored one.
pub fn read_archive(dir: &Path, expected_fingerprint: Option<&str>) -> Result<(TemplateSet, Manifest), ArchiveError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| ArchiveError::Manifest {
        path: path.clone(),
        source,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(ArchiveError::Version {
            path,
            found: manifest.format_version,
        });
    }
    if let Some(expected) = expected_fingerprint {
        if expected != manifest.fingerprint {
            return Err(ArchiveError::Fingerprint {
                expected: expected.to_string(),
                found: manifest.fingerprint.clone(),
            });
        }
    }
    let [rows, cols] = manifest.shape;
    let mut ts = TemplateSet::default();
    for e in &manifest.templates {
        let blob_path = dir.join(&e.file);
        let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
        if bytes.len() != rows * cols * 4 {
            return Err(ArchiveError::BlobSize {
                path: blob_path,
                expected: rows * cols * 4,
                found: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let matrix = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        let t = Template::new(e.id, matrix, e.support);
        if t.duration != e.duration {
            return Err(ArchiveError::Inconsistent(e.id));
        }
        ts.templates.push(t);
        ts.provenance.insert(e.id, e.provenance.clone());
    }
    Ok((ts, manifest))
}
