//! One training run: seeded split, Adam on cross-entropy, per-epoch
//! evaluation and best-epoch selection by validation accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Stage;
use crate::loading::{make_batches, LoadError, LoadedSample};
use crate::models::{argmax, Model, ModelError, ModelSpec, ModelState};
use crate::nn::{softmax_cross_entropy, Mode, NetError};
use crate::optim::Adam;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {0} has fewer than 2 samples")]
    TooFewSamples(Stage),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_lr() -> f64 {
    0.001
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_seed() -> u64 {
    42
}
fn default_val() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_eval_batch() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    /// Score the test set after every epoch. When off, it is scored once,
    /// with the best-epoch weights.
    #[serde(default = "default_true")]
    pub evaluate_test_each_epoch: bool,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: default_seed(),
            val_fraction: default_val(),
            evaluate_test_each_epoch: true,
            eval_batch_size: default_eval_batch(),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidSettings(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return bad("batch sizes must be >= 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        Ok(())
    }
}

/// Stratified, seeded split. Each class keeps `round(n * val_fraction)`
/// samples for validation, at least one and at most `n - 1`. Both halves
/// keep input order.
pub fn split_train_val<T: Scalar>(
    samples: Vec<LoadedSample<T>>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<LoadedSample<T>>, Vec<LoadedSample<T>>), TrainError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(TrainError::InvalidSettings("val_fraction must be in (0, 1)".into()));
    }
    let mut is_val = vec![false; samples.len()];
    for stage in Stage::ALL {
        let mut members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == stage).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(TrainError::TooFewSamples(stage));
        }
        let n = members.len();
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split", stage.index() as u64)));
        for &i in &members[..n_val] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .zip(is_val)
        .partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        val.into_iter().map(|(s, _)| s).collect(),
    ))
}

/// `confusion[i][j]` counts samples of class `i` predicted as `j`.
pub type Confusion = Vec<Vec<u64>>;

/// Trace over total; 0 for an empty matrix.
pub fn confusion_accuracy(confusion: &Confusion) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let trace: u64 = (0..confusion.len()).map(|i| confusion[i].get(i).copied().unwrap_or(0)).sum();
    trace as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Window-level accuracy and confusion in inference mode. Ties in the
/// logits go to the lowest class index.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    samples: &[LoadedSample<T>],
    classes: &[Stage],
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let k = classes.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for batch in make_batches(samples, batch_size.max(1), None, classes)? {
        let logits = model.infer(&batch.inputs)?;
        let width = logits.shape()[1];
        if width != k {
            return Err(ModelError::Net(NetError::Shape(format!("model has {width} outputs for {k} classes"))).into());
        }
        for (row, &y) in logits.data().chunks(width).zip(&batch.labels) {
            confusion[y][argmax(row)] += 1;
        }
    }
    Ok(Evaluation {
        accuracy: confusion_accuracy(&confusion),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Absent when per-epoch test scoring is off.
    pub test_acc: Option<f64>,
}

/// Record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub classes: Vec<Stage>,
    pub model: ModelSpec,
    pub settings: TrainSettings,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub per_epoch: Vec<EpochMetrics>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc_at_best: f64,
    pub confusion_at_best: Confusion,
}

/// A finished run: its record and the network restored to the best epoch.
pub struct TrainedRun<T: Scalar> {
    pub result: RunResult,
    pub model: Model<T>,
}

/// Trains a freshly initialized network and keeps the epoch with the highest
/// validation accuracy (earliest on ties). The test set is only ever scored,
/// never used for a decision.
pub fn train_one_run<T: Scalar>(
    spec: &ModelSpec,
    classes: &[Stage],
    train: &[LoadedSample<T>],
    val: &[LoadedSample<T>],
    test: &[LoadedSample<T>],
    settings: &TrainSettings,
) -> Result<TrainedRun<T>, TrainError> {
    settings.validate()?;
    for (name, split) in [("train", train), ("validation", val), ("test", test)] {
        if split.is_empty() {
            return Err(TrainError::EmptySplit(name));
        }
    }
    if spec.num_classes != classes.len() {
        return Err(TrainError::InvalidSettings(format!(
            "model has {} classes, run has {}",
            spec.num_classes,
            classes.len()
        )));
    }
    let mut model = Model::<T>::build(spec, settings.seed)?;
    let mut opt = Adam::<T>::new(settings.learning_rate);
    let mut per_epoch = Vec::with_capacity(settings.epochs);
    let mut best: Option<(usize, f64, ModelState<T>)> = None;
    let eb = settings.eval_batch_size;
    for epoch in 1..=settings.epochs {
        let batches = make_batches(
            train,
            settings.batch_size,
            Some(derive_seed(settings.seed, "shuffle", epoch as u64)),
            classes,
        )?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let diverged = |detail: String| TrainError::NonFiniteLoss { epoch, batch: b, detail };
            model.zero_grad();
            let logits = match model.forward(&batch.inputs, Mode::Train) {
                Ok(l) => l,
                Err(ModelError::Net(NetError::NonFinite(layer))) => {
                    return Err(diverged(format!("non-finite activations after {layer}")))
                }
                Err(e) => return Err(e.into()),
            };
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels).map_err(ModelError::from)?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            loss_sum += loss.as_f64() * batch.labels.len() as f64;
            model.backward(&grad)?;
            opt.step(model.params_mut());
        }
        model.clear_cache();
        let train_acc = evaluate(&model, train, classes, eb)?.accuracy;
        let val_acc = evaluate(&model, val, classes, eb)?.accuracy;
        let test_acc = if settings.evaluate_test_each_epoch {
            Some(evaluate(&model, test, classes, eb)?.accuracy)
        } else {
            None
        };
        per_epoch.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc,
            val_acc,
            test_acc,
        });
        if best.as_ref().is_none_or(|(_, v, _)| val_acc > *v) {
            best = Some((epoch, val_acc, model.state()));
        }
    }
    let (best_epoch, best_val_acc, state) = best.expect("at least one epoch");
    model.load_state(&state)?;
    let at_best = evaluate(&model, test, classes, eb)?;
    Ok(TrainedRun {
        result: RunResult {
            seed: settings.seed,
            classes: classes.to_vec(),
            model: spec.clone(),
            settings: settings.clone(),
            train_size: train.len(),
            val_size: val.len(),
            test_size: test.len(),
            per_epoch,
            best_epoch,
            best_val_acc,
            test_acc_at_best: at_best.accuracy,
            confusion_at_best: at_best.confusion,
        },
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Axis;
    use crate::loading::Provenance;

    fn sample(label: Stage, i: usize) -> LoadedSample<f64> {
        LoadedSample {
            data: vec![i as f64; 4],
            channels: 1,
            length: 4,
            label,
            provenance: Provenance {
                domain_id: 1,
                axes: vec![Axis::Y],
                window_index: i,
            },
        }
    }

    #[test]
    fn stratified_split_counts() {
        let samples: Vec<_> = (0..200)
            .map(|i| sample(if i % 2 == 0 { Stage::BeforeSlag } else { Stage::DuringSlag }, i))
            .collect();
        let (train, val) = split_train_val(samples.clone(), 0.2, 7).unwrap();
        for s in [Stage::BeforeSlag, Stage::DuringSlag] {
            assert_eq!(train.iter().filter(|x| x.label == s).count(), 80);
            assert_eq!(val.iter().filter(|x| x.label == s).count(), 20);
        }
        let again = split_train_val(samples, 0.2, 7).unwrap();
        assert_eq!((train, val), again);
    }

    #[test]
    fn minimal_and_too_small_strata() {
        let two = vec![sample(Stage::BeforeSlag, 0), sample(Stage::BeforeSlag, 1)];
        let (t, v) = split_train_val(two, 0.5, 1).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
        let one = vec![sample(Stage::BeforeSlag, 0), sample(Stage::DuringSlag, 1), sample(Stage::DuringSlag, 2)];
        assert!(matches!(split_train_val(one, 0.5, 1), Err(TrainError::TooFewSamples(Stage::BeforeSlag))));
    }

    #[test]
    fn confusion_accuracy_from_trace() {
        assert_eq!(confusion_accuracy(&vec![vec![9, 1], vec![2, 8]]), 0.85);
        assert_eq!(confusion_accuracy(&vec![vec![5, 0], vec![0, 5]]), 1.0);
    }

    #[test]
    fn settings_reject_bad_values() {
        let s = TrainSettings { epochs: 0, ..TrainSettings::default() };
        assert!(s.validate().is_err());
        let s = TrainSettings { val_fraction: 1.0, ..TrainSettings::default() };
        assert!(s.validate().is_err());
        let parsed: TrainSettings = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, TrainSettings::default());
    }
}
