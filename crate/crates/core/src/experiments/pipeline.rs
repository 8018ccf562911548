use std::path::PathBuf;

use super::store::{aggregate_path, checkpoint_path, read_json, run_path, write_json, AggregateResult, RunRecord, RunSummary};
use super::{ExperimentConfig, ExperimentError, FoldSpec};
use crate::dataset::{read_recording, Axis, DatasetIndex, SensorRecording};
use crate::loading::{load_parallel, load_selective_embedding, load_single_source, LoadedSample, LoadingStrategy};
use crate::models::{save_checkpoint, Model};
use crate::preprocess::{fit_rms, standardize, window, Normalizer, PreprocessError, Preprocessing, Window};
use crate::scalar::Scalar;
use crate::training::{split_train_val, train_one_run};

/// Model-ready samples of one (config, fold), shared by all its repeats.
pub struct FoldData<T> {
    pub fold: FoldSpec,
    /// Samples of the training domains, before the validation split.
    pub train_pool: Vec<LoadedSample<T>>,
    pub test: Vec<LoadedSample<T>>,
    pub normalizer: Option<Normalizer>,
}

fn axis_signal<'a, T: Scalar>(rec: &'a SensorRecording<T>, axis: Axis) -> Result<&'a [T], ExperimentError> {
    rec.axis(axis).ok_or_else(|| ExperimentError::Preprocess {
        domain: rec.domain_id,
        stage: rec.stage,
        axis,
        source: PreprocessError::UnknownAxis(crate::dataset::UnknownAxis(axis.name().into())),
    })
}

/// Reads the fold's recordings, conditions them (RMS fitted on training
/// domains only), windows every axis and applies the loading strategy.
pub fn prepare_fold<T: Scalar>(config: &ExperimentConfig, index: &DatasetIndex) -> Result<FoldData<T>, ExperimentError> {
    config.validate()?;
    let mut recordings: Vec<(bool, SensorRecording<T>)> = Vec::new();
    for domain in config.fold.all_domains() {
        for &stage in &config.classes {
            let entries: Vec<_> = index.find(domain, stage).collect();
            if entries.is_empty() {
                return Err(ExperimentError::MissingData { domain, stage });
            }
            for e in entries {
                recordings.push((domain == config.fold.test_domain, read_recording::<T>(e)?));
            }
        }
    }
    let normalizer = if config.preprocessing == Preprocessing::Rms {
        let mut per_axis = Vec::with_capacity(config.axes.len());
        for &axis in &config.axes {
            let mut signals = Vec::new();
            for (is_test, rec) in &recordings {
                if !is_test {
                    signals.push(axis_signal(rec, axis)?);
                }
            }
            per_axis.push((axis, signals));
        }
        Some(fit_rms(&per_axis).map_err(ExperimentError::Fit)?)
    } else {
        None
    };
    let mut train_pool = Vec::new();
    let mut test = Vec::new();
    for (is_test, rec) in &recordings {
        let mut groups: Vec<Vec<Window<T>>> = Vec::with_capacity(config.axes.len());
        for &axis in &config.axes {
            let raw = axis_signal(rec, axis)?;
            let wrap = |source| ExperimentError::Preprocess {
                domain: rec.domain_id,
                stage: rec.stage,
                axis,
                source,
            };
            let signal = match (&normalizer, config.preprocessing) {
                (Some(n), _) => n.apply(raw, axis).map_err(wrap)?,
                (None, Preprocessing::Zscore) => standardize(raw).map_err(wrap)?,
                (None, _) => raw.to_vec(),
            };
            groups.push(window(&signal, config.window_length, rec.stage, rec.domain_id, axis).map_err(wrap)?);
        }
        let samples = match config.loading {
            LoadingStrategy::SingleSource => load_single_source(&groups[0], config.axes[0])?,
            LoadingStrategy::Parallel => load_parallel(&groups)?,
            LoadingStrategy::SelectiveEmbedding => load_selective_embedding(&groups)?,
        };
        if *is_test {
            test.extend(samples);
        } else {
            train_pool.extend(samples);
        }
    }
    Ok(FoldData {
        fold: config.fold.clone(),
        train_pool,
        test,
        normalizer,
    })
}

/// Trains repeat `repeat` (seed `base + repeat`) on prepared fold data.
pub fn run_repeat<T: Scalar>(
    config: &ExperimentConfig,
    data: &FoldData<T>,
    repeat: usize,
) -> Result<(RunRecord, Model<T>), ExperimentError> {
    let settings = config.repeat_settings(repeat);
    let train_err = |source| ExperimentError::Train { repeat, source };
    let (train, val) = split_train_val(data.train_pool.clone(), settings.val_fraction, settings.seed).map_err(train_err)?;
    let run = train_one_run(&config.model_spec(), &config.classes, &train, &val, &data.test, &settings)
        .map_err(train_err)?;
    Ok((
        RunRecord {
            config_id: config.id.clone(),
            fold: data.fold.clone(),
            repeat,
            normalizer: data.normalizer.clone(),
            result: run.result,
        },
        run.model,
    ))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where run and aggregate JSON go; nothing is written when `None`.
    pub results_dir: Option<PathBuf>,
    pub save_checkpoints: bool,
    /// Reuse run records already on disk instead of retraining.
    pub resume: bool,
}

/// All repeats of `config` on its fold, then their aggregate. Completed
/// repeats stay on disk if a later one fails.
pub fn run_experiment<T: Scalar>(
    config: &ExperimentConfig,
    index: &DatasetIndex,
    opts: &RunOptions,
) -> Result<AggregateResult, ExperimentError> {
    config.validate()?;
    let test_domain = config.fold.test_domain;
    let mut data: Option<FoldData<T>> = None;
    let mut runs = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let path = opts.results_dir.as_ref().map(|root| run_path(root, &config.id, test_domain, repeat));
        if let (true, Some(p)) = (opts.resume, &path) {
            if p.is_file() {
                let rec: RunRecord = read_json(p)?;
                runs.push(RunSummary::from(&rec));
                continue;
            }
        }
        if data.is_none() {
            data = Some(prepare_fold(config, index)?);
        }
        let (record, model) = run_repeat(config, data.as_ref().expect("prepared"), repeat)?;
        if let (Some(root), Some(p)) = (&opts.results_dir, &path) {
            if opts.save_checkpoints {
                let ck = checkpoint_path(root, &config.id, test_domain, repeat);
                let meta = serde_json::json!({
                    "config_id": config.id,
                    "test_domain": test_domain,
                    "repeat": repeat,
                    "best_epoch": record.result.best_epoch,
                });
                if let Some(dir) = ck.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Store {
                        path: dir.display().to_string(),
                        msg: e.to_string(),
                    })?;
                }
                save_checkpoint(&model, &ck, meta).map_err(|e| ExperimentError::Store {
                    path: ck.display().to_string(),
                    msg: e.to_string(),
                })?;
            }
            write_json(p, &record)?;
        }
        runs.push(RunSummary::from(&record));
    }
    let agg = AggregateResult::from_runs(&config.id, runs, config.target);
    if let Some(root) = &opts.results_dir {
        write_json(&aggregate_path(root, &config.id, test_domain), &agg)?;
    }
    Ok(agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Stage, SyntheticSpec};
    use crate::experiments::ablation_suite;

    fn tiny_index() -> DatasetIndex {
        generate_synthetic(&SyntheticSpec {
            num_domains: 3,
            samples_per_recording: 96,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn tiny(id: &str) -> ExperimentConfig {
        let mut c = ablation_suite().into_iter().find(|c| c.id == id).unwrap();
        c.fold = FoldSpec {
            test_domain: 3,
            train_domains: [1, 2].into(),
        };
        c.window_length = 32;
        c
    }

    #[test]
    fn selective_fold_sizes() {
        let data = prepare_fold::<f32>(&tiny("M9"), &tiny_index()).unwrap();
        // 2 train domains x 2 classes x 3 windows x 3 axes
        assert_eq!(data.train_pool.len(), 36);
        assert_eq!(data.test.len(), 18);
        assert!(data.test.iter().all(|s| s.provenance.domain_id == 3));
        let n = data.normalizer.unwrap();
        assert_eq!(n.rms_value.len(), 3);
    }

    #[test]
    fn parallel_has_three_channels() {
        let data = prepare_fold::<f32>(&tiny("M10"), &tiny_index()).unwrap();
        assert_eq!(data.train_pool.len(), 12);
        assert!(data.train_pool.iter().all(|s| s.channels == 3));
    }

    #[test]
    fn missing_class_is_reported() {
        let mut index = tiny_index();
        index.entries.retain(|e| !(e.domain == 2 && e.stage == Stage::DuringSlag));
        assert!(matches!(
            prepare_fold::<f32>(&tiny("A2"), &index),
            Err(ExperimentError::MissingData { domain: 2, stage: Stage::DuringSlag })
        ));
    }

    #[test]
    fn rms_ignores_test_domain() {
        let index = tiny_index();
        let base = prepare_fold::<f64>(&tiny("A5"), &index).unwrap();
        let mut shifted = tiny_index();
        for e in &mut shifted.entries {
            if let crate::dataset::Location::Synthetic(spec) = &mut e.location {
                if e.domain == 3 {
                    let mut s = (**spec).clone();
                    s.amplitude = 7.0;
                    *spec = std::sync::Arc::new(s);
                }
            }
        }
        let other = prepare_fold::<f64>(&tiny("A5"), &shifted).unwrap();
        assert_eq!(base.normalizer, other.normalizer);
        assert_eq!(base.train_pool, other.train_pool);
        assert_ne!(base.test, other.test);
    }
}
