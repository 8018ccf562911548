use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, FoldSpec, Target};
use crate::preprocess::Normalizer;
use crate::training::{Confusion, RunResult};

/// `<root>/<config>/<fold>/<repeat>.json`
pub fn run_path(root: &Path, config_id: &str, test_domain: u32, repeat: usize) -> PathBuf {
    root.join(config_id).join(test_domain.to_string()).join(format!("{repeat}.json"))
}

pub fn checkpoint_path(root: &Path, config_id: &str, test_domain: u32, repeat: usize) -> PathBuf {
    root.join(config_id).join(test_domain.to_string()).join(format!("{repeat}.ckpt"))
}

/// `<root>/<config>/<fold>/aggregate.json`
pub fn aggregate_path(root: &Path, config_id: &str, test_domain: u32) -> PathBuf {
    root.join(config_id).join(test_domain.to_string()).join("aggregate.json")
}

/// `<root>/<config>/aggregate.json`, pooled over folds.
pub fn config_aggregate_path(root: &Path, config_id: &str) -> PathBuf {
    root.join(config_id).join("aggregate.json")
}

fn store_err(path: &Path, msg: impl ToString) -> ExperimentError {
    ExperimentError::Store {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

/// Pretty JSON, written to a temporary sibling and renamed into place so an
/// interrupted write never leaves a truncated record.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| store_err(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| store_err(path, e))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| store_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| store_err(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| store_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| store_err(path, e))
}

/// What gets written per repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub fold: FoldSpec,
    pub repeat: usize,
    /// Fitted state when the run used RMS scaling.
    pub normalizer: Option<Normalizer>,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub test_domain: u32,
    pub repeat: usize,
    pub seed: u64,
    pub test_acc: f64,
    pub confusion: Confusion,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            test_domain: r.fold.test_domain,
            repeat: r.repeat,
            seed: r.result.seed,
            test_acc: r.result.test_acc_at_best,
            confusion: r.result.confusion_at_best.clone(),
        }
    }
}

/// Mean and sample standard deviation of best-epoch test accuracy over a
/// set of runs (the repeats of one fold, or every run of a config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub config_id: String,
    pub runs: Vec<RunSummary>,
    pub mean: f64,
    pub std: f64,
    /// Set when there is a single run; `std` is then reported as 0.
    pub std_undefined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

fn mean_std(xs: &[f64]) -> (f64, f64, bool) {
    if xs.is_empty() {
        return (0.0, 0.0, true);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0, true);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt(), false)
}

impl AggregateResult {
    /// Runs are sorted by (test domain descending, repeat).
    pub fn from_runs(config_id: &str, mut runs: Vec<RunSummary>, target: Option<Target>) -> Self {
        runs.sort_by(|a, b| b.test_domain.cmp(&a.test_domain).then(a.repeat.cmp(&b.repeat)));
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let (mean, std, std_undefined) = mean_std(&accs);
        Self {
            config_id: config_id.to_string(),
            runs,
            mean,
            std,
            std_undefined,
            target,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_acc).collect()
    }

    /// The same aggregate rebuilt from its run list.
    pub fn recomputed(&self) -> Self {
        Self::from_runs(&self.config_id, self.runs.clone(), self.target)
    }

    pub fn test_domains(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.runs.iter().map(|r| r.test_domain).collect();
        d.dedup();
        d
    }

    /// Mean accuracy per held-out domain, in run order.
    pub fn per_fold_means(&self) -> Vec<(u32, f64)> {
        self.test_domains()
            .into_iter()
            .map(|d| {
                let accs: Vec<f64> = self.runs.iter().filter(|r| r.test_domain == d).map(|r| r.test_acc).collect();
                (d, mean_std(&accs).0)
            })
            .collect()
    }
}

/// Every run record under `root`, plus the files that could not be parsed.
pub fn load_run_records(root: &Path) -> (Vec<RunRecord>, Vec<(PathBuf, String)>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut files = Vec::new();
    let listing = |dir: &Path| -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        v.sort();
        v
    };
    for config_dir in listing(root).into_iter().filter(|p| p.is_dir()) {
        for fold_dir in listing(&config_dir).into_iter().filter(|p| p.is_dir()) {
            for f in listing(&fold_dir) {
                let is_run = f.extension().is_some_and(|e| e == "json")
                    && f.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.parse::<usize>().is_ok());
                if is_run {
                    files.push(f);
                }
            }
        }
    }
    for f in files {
        match read_json::<RunRecord>(&f) {
            Ok(r) => records.push(r),
            Err(e) => failures.push((f, e.to_string())),
        }
    }
    (records, failures)
}
