use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use slagnet::dataset::{generate_synthetic, load_manifest, DatasetIndex, SyntheticSpec};
use slagnet::experiments::{
    ablation_suite, cross_domain_folds, hyperparameter_grid, pin_full_protocol, ExperimentConfig, FoldSpec,
};

/// Exactly one of the two must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Grid,
    Ablation,
    Single(Box<ExperimentConfig>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldKeyword {
    /// Every leave-one-domain-out fold of the dataset.
    All,
    /// The fold stored in each config.
    Stored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FoldSelection {
    Keyword(FoldKeyword),
    /// Held-out domains; the rest of the dataset trains.
    Domains(Vec<u32>),
}

fn default_seed() -> u64 {
    42
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// The `run` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: DatasetSource,
    pub selection: Selection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    /// Pins 10 repeats of 100 epochs.
    #[serde(default)]
    pub full_protocol: bool,
    /// Defaults to all folds for the ablation suite, the stored fold
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldSelection>,
    /// Restrict to these config ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub only: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CliConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(m) = &cfg.dataset.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => bail!("dataset needs exactly one of `manifest` or `synthetic`"),
        }
        if self.full_protocol && (self.repeats.is_some() || self.epochs.is_some()) {
            bail!("full_protocol pins repeats and epochs; drop the overrides");
        }
        if self.repeats == Some(0) || self.epochs == Some(0) {
            bail!("repeats and epochs must be positive");
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<DatasetIndex> {
        match (&self.dataset.manifest, &self.dataset.synthetic) {
            (Some(m), None) => Ok(load_manifest(m)?),
            (None, Some(spec)) => Ok(generate_synthetic(spec)?),
            _ => bail!("dataset needs exactly one of `manifest` or `synthetic`"),
        }
    }

    /// Selected configs with seed and protocol overrides applied, before fold
    /// expansion.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut configs = match &self.selection {
            Selection::Grid => hyperparameter_grid(),
            Selection::Ablation => ablation_suite(),
            Selection::Single(c) => vec![(**c).clone()],
        };
        if let Some(only) = &self.only {
            let known: BTreeSet<&str> = configs.iter().map(|c| c.id.as_str()).collect();
            if let Some(bad) = only.iter().find(|id| !known.contains(id.as_str())) {
                bail!("unknown config id {bad:?} in `only`");
            }
            configs.retain(|c| only.contains(&c.id));
        }
        for c in &mut configs {
            c.settings.seed = self.base_seed;
            if self.full_protocol {
                pin_full_protocol(c);
            }
            if let Some(r) = self.repeats {
                c.repeats = r;
            }
            if let Some(e) = self.epochs {
                c.settings.epochs = e;
            }
            c.validate()?;
        }
        Ok(configs)
    }

    /// One config per (config, fold).
    pub fn expand(&self, configs: &[ExperimentConfig], domains: &BTreeSet<u32>) -> Result<Vec<ExperimentConfig>> {
        let default = match self.selection {
            Selection::Ablation => FoldSelection::Keyword(FoldKeyword::All),
            _ => FoldSelection::Keyword(FoldKeyword::Stored),
        };
        let folds: Option<Vec<FoldSpec>> = match self.folds.as_ref().unwrap_or(&default) {
            FoldSelection::Keyword(FoldKeyword::Stored) => None,
            FoldSelection::Keyword(FoldKeyword::All) => Some(cross_domain_folds(domains)?),
            FoldSelection::Domains(tests) => {
                let all = cross_domain_folds(domains)?;
                let mut picked = Vec::new();
                for t in tests {
                    match all.iter().find(|f| f.test_domain == *t) {
                        Some(f) => picked.push(f.clone()),
                        None => bail!("fold domain {t} is not in the dataset"),
                    }
                }
                Some(picked)
            }
        };
        Ok(match folds {
            None => configs.to_vec(),
            Some(folds) => configs
                .iter()
                .flat_map(|c| folds.iter().map(move |f| c.with_fold(f.clone())))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> CliConfig {
        serde_json::from_str(r#"{"dataset": {"synthetic": {"num_domains": 4}}, "selection": "ablation"}"#).unwrap()
    }

    #[test]
    fn one_source_only() {
        let mut c = synthetic();
        c.check().unwrap();
        c.dataset.manifest = Some("m.json".into());
        assert!(c.check().is_err());
        c.dataset = DatasetSource::default();
        assert!(c.check().is_err());
    }

    #[test]
    fn ablation_expands_over_folds() {
        let c = synthetic();
        let configs = c.configs().unwrap();
        assert_eq!(configs.len(), 10);
        let jobs = c.expand(&configs, &(1..=4).collect()).unwrap();
        assert_eq!(jobs.len(), 40);
        assert!(jobs.iter().all(|j| j.settings.seed == 42 && j.fold.train_domains.len() == 3));
    }

    #[test]
    fn full_protocol_pins_protocol() {
        let mut c = synthetic();
        c.full_protocol = true;
        assert!(c.configs().unwrap().iter().all(|j| j.repeats == 10 && j.settings.epochs == 100));
        c.epochs = Some(3);
        assert!(c.check().is_err());
    }

    #[test]
    fn single_config_and_fold_list() {
        let single = serde_json::to_value(&ablation_suite()[8]).unwrap();
        let c: CliConfig = serde_json::from_value(serde_json::json!({
            "dataset": {"manifest": "data/manifest.json"},
            "selection": {"single": single},
            "folds": [2, 3],
            "repeats": 1,
        }))
        .unwrap();
        let configs = c.configs().unwrap();
        let jobs = c.expand(&configs, &(1..=3).collect()).unwrap();
        assert_eq!(jobs.iter().map(|j| j.fold.test_domain).collect::<Vec<_>>(), vec![2, 3]);
        let bad = serde_json::from_value::<CliConfig>(serde_json::json!({
            "dataset": {"manifest": "m"}, "selection": "grid", "folds": "some"
        }));
        assert!(bad.is_err());
    }
}
