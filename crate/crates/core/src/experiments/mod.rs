//! Leave-one-domain-out folds, experiment configurations (the batch/window
//! grid and the ablation matrix), the end-to-end pipeline and result
//! aggregation.

mod pipeline;
mod store;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Axis, DatasetError, Stage, NUM_DOMAINS};
use crate::loading::{LoadError, LoadingStrategy};
use crate::models::{ModelKind, ModelSpec, DEFAULT_DROPOUT};
use crate::preprocess::{PreprocessError, Preprocessing};
use crate::training::{TrainError, TrainSettings};

pub use pipeline::{prepare_fold, run_experiment, run_repeat, FoldData, RunOptions};
pub use store::{
    aggregate_path, checkpoint_path, config_aggregate_path, load_run_records, read_json, run_path, write_json,
    AggregateResult, RunRecord, RunSummary,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("invalid config {id}: {msg}")]
    InvalidConfig { id: String, msg: String },
    #[error("dataset has no recording for domain {domain}, stage {stage}")]
    MissingData { domain: u32, stage: Stage },
    #[error("domain {domain} stage {stage} axis {axis}: {source}")]
    Preprocess {
        domain: u32,
        stage: Stage,
        axis: Axis,
        source: PreprocessError,
    },
    #[error("fitting RMS scale: {0}")]
    Fit(PreprocessError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("repeat {repeat}: {source}")]
    Train { repeat: usize, source: TrainError },
    #[error("{path}: {msg}")]
    Store { path: String, msg: String },
}

/// Test domain plus the domains used for training and validation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldSpec {
    pub test_domain: u32,
    pub train_domains: BTreeSet<u32>,
}

impl FoldSpec {
    /// Hold out `test` from `1..=16`.
    pub fn holdout(test: u32) -> Self {
        Self {
            test_domain: test,
            train_domains: (1..=NUM_DOMAINS).filter(|&d| d != test).collect(),
        }
    }

    pub fn all_domains(&self) -> BTreeSet<u32> {
        let mut all = self.train_domains.clone();
        all.insert(self.test_domain);
        all
    }
}

/// One fold per domain, test domain descending.
pub fn cross_domain_folds(domains: &BTreeSet<u32>) -> Result<Vec<FoldSpec>, ExperimentError> {
    if domains.len() < 2 {
        return Err(ExperimentError::TooFewDomains(domains.len()));
    }
    Ok(domains
        .iter()
        .rev()
        .map(|&test| FoldSpec {
            test_domain: test,
            train_domains: domains.iter().copied().filter(|&d| d != test).collect(),
        })
        .collect())
}

/// An accuracy reported for a configuration, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub mean: f64,
    pub std: f64,
}

fn default_repeats() -> usize {
    10
}
fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}
fn default_steps() -> usize {
    1
}

/// Everything needed to run one configuration on one fold. The training
/// seed of repeat `r` is `settings.seed + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub model_kind: ModelKind,
    pub preprocessing: Preprocessing,
    pub loading: LoadingStrategy,
    pub axes: Vec<Axis>,
    pub classes: Vec<Stage>,
    pub window_length: usize,
    pub fold: FoldSpec,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub settings: TrainSettings,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_steps")]
    pub lstm_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ExperimentConfig {
    pub fn batch_size(&self) -> usize {
        self.settings.batch_size
    }

    pub fn base_seed(&self) -> u64 {
        self.settings.seed
    }

    pub fn in_channels(&self) -> usize {
        match self.loading {
            LoadingStrategy::Parallel => self.axes.len(),
            _ => 1,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model_kind,
            in_channels: self.in_channels(),
            num_classes: self.classes.len(),
            dropout: self.dropout,
            lstm_steps: self.lstm_steps,
        }
    }

    /// Settings for repeat `r`.
    pub fn repeat_settings(&self, repeat: usize) -> TrainSettings {
        TrainSettings {
            seed: self.base_seed() + repeat as u64,
            ..self.settings.clone()
        }
    }

    pub fn with_fold(&self, fold: FoldSpec) -> Self {
        Self { fold, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| {
            Err(ExperimentError::InvalidConfig {
                id: self.id.clone(),
                msg,
            })
        };
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return bad(format!("id {:?} is not a usable directory name", self.id));
        }
        let axes: BTreeSet<Axis> = self.axes.iter().copied().collect();
        if axes.len() != self.axes.len() {
            return bad("axes repeat".into());
        }
        match (self.loading, self.axes.len()) {
            (LoadingStrategy::SingleSource, 1) => {}
            (LoadingStrategy::SingleSource, n) => return bad(format!("single-source loading needs 1 axis, got {n}")),
            (_, n) if n < 2 => return bad(format!("{:?} loading needs at least 2 axes, got {n}", self.loading)),
            _ => {}
        }
        let classes: BTreeSet<Stage> = self.classes.iter().copied().collect();
        if classes.len() != self.classes.len() || classes.len() < 2 {
            return bad("need at least 2 distinct classes".into());
        }
        if self.window_length < 1 {
            return bad("window_length must be >= 1".into());
        }
        if self.repeats < 1 {
            return bad("repeats must be >= 1".into());
        }
        if self.fold.train_domains.is_empty() || self.fold.train_domains.contains(&self.fold.test_domain) {
            return bad("fold must hold out its test domain from a non-empty training set".into());
        }
        if let Err(e) = self.settings.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.model_spec().validate() {
            return bad(e.to_string());
        }
        Ok(())
    }
}

const BINARY: [Stage; 2] = [Stage::BeforeSlag, Stage::DuringSlag];
const TERNARY: [Stage; 3] = [Stage::EarlyNoSlag, Stage::BeforeSlag, Stage::DuringSlag];

fn base_config(id: String, kind: ModelKind, pre: Preprocessing, batch: usize, window: usize) -> ExperimentConfig {
    ExperimentConfig {
        id,
        model_kind: kind,
        preprocessing: pre,
        loading: LoadingStrategy::SingleSource,
        axes: vec![Axis::Y],
        classes: BINARY.to_vec(),
        window_length: window,
        fold: FoldSpec::holdout(NUM_DOMAINS),
        repeats: default_repeats(),
        settings: TrainSettings {
            batch_size: batch,
            ..TrainSettings::default()
        },
        dropout: DEFAULT_DROPOUT,
        lstm_steps: 1,
        target: None,
        note: None,
    }
}

/// Reported test accuracy per grid cell, ordered model, preprocessing,
/// batch, window as in [`hyperparameter_grid`].
const GRID_TARGETS: [(f64, f64); 24] = [
    (76.69, 2.96),
    (68.06, 2.26),
    (71.00, 4.48),
    (77.58, 1.76),
    (65.16, 6.17),
    (66.33, 5.47),
    (77.66, 1.49),
    (69.03, 3.80),
    (66.00, 4.42),
    (76.37, 2.72),
    (66.77, 4.34),
    (66.00, 4.16),
    (82.06, 2.98),
    (65.64, 3.54),
    (56.33, 5.47),
    (81.77, 3.87),
    (65.65, 2.98),
    (57.41, 4.09),
    (82.76, 2.91),
    (63.55, 5.82),
    (55.67, 3.00),
    (81.45, 3.75),
    (65.32, 2.31),
    (57.33, 5.54),
];

/// The 2 x 2 x 2 x 3 grid over model, preprocessing, batch size and window
/// length; y axis, before/during classes, domain 16 held out.
pub fn hyperparameter_grid() -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(24);
    for kind in [ModelKind::Cnn, ModelKind::CnnLstm] {
        for pre in [Preprocessing::Zscore, Preprocessing::Rms] {
            for batch in [64, 128] {
                for window in [512, 1024, 2048] {
                    let id = format!("grid-{}-{}-b{batch}-l{window}", kind.tag(), pre.tag());
                    let mut c = base_config(id, kind, pre, batch, window);
                    let (mean, std) = GRID_TARGETS[out.len()];
                    c.target = Some(Target { mean, std });
                    out.push(c);
                }
            }
        }
    }
    out
}

/// One row of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub id: &'static str,
    pub cnn: bool,
    pub lstm: bool,
    pub rms: bool,
    pub x: bool,
    pub y: bool,
    pub z: bool,
    pub loading: LoadingStrategy,
    pub three_classes: bool,
    pub target: Option<(f64, f64)>,
    pub note: &'static str,
}

const fn row(
    id: &'static str,
    lstm: bool,
    rms: bool,
    xyz: (bool, bool, bool),
    loading: LoadingStrategy,
    three_classes: bool,
    target: Option<(f64, f64)>,
    note: &'static str,
) -> AblationRow {
    AblationRow {
        id,
        cnn: true,
        lstm,
        rms,
        x: xyz.0,
        y: xyz.1,
        z: xyz.2,
        loading,
        three_classes,
        target,
        note,
    }
}

use LoadingStrategy::{Parallel, SelectiveEmbedding, SingleSource};

/// The ablation matrix as checkmarks. Row notes that disagree with the
/// checkmarks are summarized in `note`; the checkmarks win.
pub const ABLATION_TABLE: [AblationRow; 10] = [
    row("A1", false, true, (true, false, false), SingleSource, false, None, "note names CNN-LSTM; LSTM column unchecked"),
    row("A2", false, true, (false, true, false), SingleSource, false, Some((63.13, 2.00)), "note names CNN-LSTM; LSTM column unchecked"),
    row("A3", false, true, (false, false, true), SingleSource, false, None, "note names CNN-LSTM; LSTM column unchecked"),
    row("A4", true, true, (true, false, false), SingleSource, false, None, "note says LSTM only; CNN column checked"),
    row("A5", true, true, (false, true, false), SingleSource, false, None, ""),
    row("A6", true, true, (false, false, true), SingleSource, false, Some((61.76, 1.67)), ""),
    row("A7", true, false, (false, true, false), SingleSource, true, None, "no preprocessing"),
    row("A8", true, true, (false, true, false), SingleSource, true, Some((50.68, 2.93)), ""),
    row("M9", true, true, (true, true, true), SelectiveEmbedding, false, Some((99.10, 0.30)), "single channel selective embedding"),
    row("M10", true, true, (true, true, true), Parallel, false, Some((93.56, 2.23)), "multi channel parallel loading; also reported as 93.09 +/- 2.50"),
];

impl AblationRow {
    pub fn to_config(&self) -> ExperimentConfig {
        let kind = if self.lstm { ModelKind::CnnLstm } else { ModelKind::Cnn };
        let pre = if self.rms { Preprocessing::Rms } else { Preprocessing::None };
        let mut c = base_config(self.id.to_string(), kind, pre, 64, 512);
        c.axes = [(Axis::X, self.x), (Axis::Y, self.y), (Axis::Z, self.z)]
            .into_iter()
            .filter(|(_, on)| *on)
            .map(|(a, _)| a)
            .collect();
        c.loading = self.loading;
        c.classes = if self.three_classes { TERNARY.to_vec() } else { BINARY.to_vec() };
        c.target = self.target.map(|(mean, std)| Target { mean, std });
        c.note = (!self.note.is_empty()).then(|| self.note.to_string());
        c
    }
}

/// A1..A8, M9, M10 with batch 64 and window 512. Each is meant to run on
/// every fold of [`cross_domain_folds`]; the stored fold is domain 16.
pub fn ablation_suite() -> Vec<ExperimentConfig> {
    ABLATION_TABLE.iter().map(AblationRow::to_config).collect()
}

/// Full protocol: 10 repeats of 100 epochs.
pub fn pin_full_protocol(config: &mut ExperimentConfig) {
    config.repeats = 10;
    config.settings.epochs = 100;
}
