use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetIndex, IndexEntry, Location, Source, Stage, CANONICAL_LENGTH, NUM_DOMAINS};

pub const MANIFEST_VERSION: u32 = 1;

/// On-disk index: recording paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate_hz: f64,
    /// Expected samples per axis; the reference length when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_recording: Option<usize>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub domain: u32,
    pub stage: Stage,
    pub condition: u32,
    pub path: String,
}

/// Parses and checks a manifest. Every referenced file must exist; no sample
/// data is read.
pub fn load_manifest(path: &Path) -> Result<DatasetIndex, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DatasetError::MalformedManifest(e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DatasetError::MalformedManifest(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    if !(manifest.sample_rate_hz.is_finite() && manifest.sample_rate_hz > 0.0) {
        return Err(DatasetError::MalformedManifest("sample_rate_hz must be positive".into()));
    }
    if manifest.samples_per_recording == Some(0) {
        return Err(DatasetError::MalformedManifest("samples_per_recording must be positive".into()));
    }
    if manifest.entries.is_empty() {
        return Err(DatasetError::MalformedManifest("no entries".into()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !(1..=NUM_DOMAINS).contains(&e.domain) {
            return Err(DatasetError::MalformedManifest(format!(
                "domain {} outside 1..={NUM_DOMAINS}",
                e.domain
            )));
        }
        if !seen.insert((e.domain, e.stage, e.condition)) {
            return Err(DatasetError::DuplicateEntry {
                domain: e.domain,
                stage: e.stage,
                condition: e.condition,
            });
        }
        let file = base.join(&e.path);
        if !file.is_file() {
            return Err(DatasetError::MissingFile(file));
        }
        entries.push(IndexEntry {
            domain: e.domain,
            stage: e.stage,
            condition: e.condition,
            sample_rate_hz: manifest.sample_rate_hz,
            location: Location::File(file),
        });
    }
    Ok(DatasetIndex {
        source: Source::Disk,
        sample_rate_hz: manifest.sample_rate_hz,
        samples_per_recording: manifest.samples_per_recording.unwrap_or(CANONICAL_LENGTH),
        entries,
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DatasetError::io(path, e))
}
