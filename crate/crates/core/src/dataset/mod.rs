//! Recordings, the dataset index and the ways to fill it: a JSON manifest
//! of CSV files on disk, or a deterministic tone generator.

mod csvio;
mod manifest;
mod synthetic;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use csvio::{read_recording_csv, write_recording_csv};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry, MANIFEST_VERSION};
pub use synthetic::{generate_synthetic, synthesize, write_dataset, SyntheticSpec, ToneTable};
pub use validate::{validate_dataset, Anomaly, ReadFailure, ValidationReport};

/// Nominal sampling rate of the reference recordings.
pub const CANONICAL_RATE_HZ: f64 = 6400.0;
/// Nominal samples per axis of a reference recording (5 s at 6400 Hz).
pub const CANONICAL_LENGTH: usize = 32_000;
/// Domains in the full grid.
pub const NUM_DOMAINS: u32 = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("duplicate entry for domain {domain}, stage {stage}, condition {condition}")]
    DuplicateEntry { domain: u32, stage: Stage, condition: u32 },
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("axis lengths differ: {0:?}")]
    AxisLengthMismatch(Vec<(Axis, usize)>),
    #[error("empty recording {0}")]
    EmptyRecording(PathBuf),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    UnknownAxis(#[from] UnknownAxis),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.to_path_buf(), source }
    }
}

/// Flow stage of a recording; the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "E")]
    EarlyNoSlag,
    #[serde(rename = "B")]
    BeforeSlag,
    #[serde(rename = "S")]
    DuringSlag,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::EarlyNoSlag, Stage::BeforeSlag, Stage::DuringSlag];

    pub fn code(self) -> &'static str {
        match self {
            Stage::EarlyNoSlag => "E",
            Stage::BeforeSlag => "B",
            Stage::DuringSlag => "S",
        }
    }

    pub fn from_code(code: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown axis {0:?}")]
pub struct UnknownAxis(pub String);

/// Accelerometer axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = UnknownAxis;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAxis(s.to_string()))
    }
}

/// One labeled multi-axis capture. Axes keep file order and have equal
/// length.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecording<T> {
    pub domain_id: u32,
    pub stage: Stage,
    pub condition_index: u32,
    pub sample_rate_hz: f64,
    axes: Vec<(Axis, Vec<T>)>,
}

impl<T: Scalar> SensorRecording<T> {
    pub fn new(
        domain_id: u32,
        stage: Stage,
        condition_index: u32,
        sample_rate_hz: f64,
        axes: Vec<(Axis, Vec<T>)>,
    ) -> Result<Self, DatasetError> {
        let first = axes.first().map_or(0, |(_, v)| v.len());
        if axes.iter().any(|(_, v)| v.len() != first) {
            return Err(DatasetError::AxisLengthMismatch(
                axes.iter().map(|(a, v)| (*a, v.len())).collect(),
            ));
        }
        Ok(Self {
            domain_id,
            stage,
            condition_index,
            sample_rate_hz,
            axes,
        })
    }

    /// Samples per axis.
    pub fn len(&self) -> usize {
        self.axes.first().map_or(0, |(_, v)| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axes(&self) -> &[(Axis, Vec<T>)] {
        &self.axes
    }

    pub fn axis_names(&self) -> Vec<Axis> {
        self.axes.iter().map(|(a, _)| *a).collect()
    }

    pub fn axis(&self, axis: Axis) -> Option<&[T]> {
        self.axes.iter().find(|(a, _)| *a == axis).map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Disk,
    Synthetic,
}

/// Where an entry's samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    File(PathBuf),
    Synthetic(Arc<SyntheticSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub domain: u32,
    pub stage: Stage,
    pub condition: u32,
    pub sample_rate_hz: f64,
    pub location: Location,
}

impl IndexEntry {
    pub fn describe(&self) -> String {
        match &self.location {
            Location::File(p) => format!("{} ({}{})", p.display(), self.stage, self.domain),
            Location::Synthetic(_) => format!("synthetic {}{}", self.stage, self.domain),
        }
    }
}

/// Immutable list of recordings plus the nominal rate and length they are
/// expected to have.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub source: Source,
    pub sample_rate_hz: f64,
    pub samples_per_recording: usize,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domains(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.entries.iter().map(|e| e.domain).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn find(&self, domain: u32, stage: Stage) -> impl Iterator<Item = &IndexEntry> {
        self.entries
            .iter()
            .filter(move |e| e.domain == domain && e.stage == stage)
    }
}

/// Reads the samples behind an index entry. Synthetic entries are
/// regenerated from their spec.
pub fn read_recording<T: Scalar>(entry: &IndexEntry) -> Result<SensorRecording<T>, DatasetError> {
    match &entry.location {
        Location::File(path) => {
            let axes = read_recording_csv::<T>(path)?;
            SensorRecording::new(entry.domain, entry.stage, entry.condition, entry.sample_rate_hz, axes)
        }
        Location::Synthetic(spec) => {
            let rec = synthesize(spec, entry.domain, entry.stage)?;
            let axes = rec
                .axes
                .into_iter()
                .map(|(a, v)| (a, v.into_iter().map(T::of).collect()))
                .collect();
            SensorRecording::new(entry.domain, entry.stage, entry.condition, entry.sample_rate_hz, axes)
        }
    }
}
