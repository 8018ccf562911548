use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::csvio::write_recording_csv;
use super::manifest::{write_manifest, Manifest, ManifestEntry, MANIFEST_VERSION};
use super::{
    read_recording, Axis, DatasetError, DatasetIndex, IndexEntry, Location, SensorRecording, Source, Stage,
    CANONICAL_LENGTH, CANONICAL_RATE_HZ, NUM_DOMAINS,
};
use crate::rng::derive_seed;

/// Tone frequency in Hz per stage and axis (x, y, z order); `None` leaves
/// that axis as pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToneTable(pub BTreeMap<Stage, [Option<f64>; 3]>);

impl Default for ToneTable {
    fn default() -> Self {
        ToneTable(BTreeMap::from([
            (Stage::EarlyNoSlag, [Some(30.0), Some(35.0), Some(40.0)]),
            (Stage::BeforeSlag, [Some(60.0), Some(70.0), Some(80.0)]),
            (Stage::DuringSlag, [Some(120.0), Some(140.0), Some(160.0)]),
        ]))
    }
}

impl ToneTable {
    pub fn tone(&self, stage: Stage, axis: Axis) -> Option<f64> {
        self.0.get(&stage).and_then(|t| t[axis.index()])
    }

    /// The default table with every axis but `axis` silenced.
    pub fn only_axis(axis: Axis) -> Self {
        let mut t = ToneTable::default();
        for tones in t.0.values_mut() {
            for a in Axis::ALL {
                if a != axis {
                    tones[a.index()] = None;
                }
            }
        }
        t
    }
}

/// Parameters of the tone-plus-noise generator. Each stage is a sine per
/// axis; each domain perturbs amplitude and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_domains: u32,
    pub samples_per_recording: usize,
    pub sample_rate_hz: f64,
    pub tone_table: ToneTable,
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Half-width of the per-domain relative amplitude jitter; the phase
    /// offset is drawn from `jitter * U(-pi, pi)`.
    pub domain_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_domains: NUM_DOMAINS,
            samples_per_recording: CANONICAL_LENGTH,
            sample_rate_hz: CANONICAL_RATE_HZ,
            tone_table: ToneTable::default(),
            amplitude: 1.0,
            noise_sigma: 0.1,
            domain_jitter: 0.2,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if !(1..=NUM_DOMAINS).contains(&self.num_domains) {
            return bad(format!("num_domains {} outside 1..={NUM_DOMAINS}", self.num_domains));
        }
        if self.samples_per_recording == 0 {
            return bad("samples_per_recording must be positive".into());
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive".into());
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return bad("amplitude must be finite and non-negative".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.domain_jitter) {
            return bad(format!("domain_jitter {} outside [0, 1)", self.domain_jitter));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        for stage in Stage::ALL {
            let Some(tones) = self.tone_table.0.get(&stage) else {
                return bad(format!("tone table has no stage {stage}"));
            };
            for (axis, f) in Axis::ALL.iter().zip(tones) {
                if let Some(f) = *f {
                    if !(f.is_finite() && f > 0.0 && f < nyquist) {
                        return bad(format!("tone {f} Hz on {stage}/{axis} not in (0, {nyquist})"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates one recording. Values depend only on the spec, the domain and
/// the stage.
pub fn synthesize(spec: &SyntheticSpec, domain: u32, stage: Stage) -> Result<SensorRecording<f64>, DatasetError> {
    spec.validate()?;
    if !(1..=spec.num_domains).contains(&domain) {
        return Err(DatasetError::InvalidSpec(format!("domain {domain} not generated")));
    }
    let n = spec.samples_per_recording;
    let mut axes = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let key = u64::from(domain) * 3 + axis.index() as u64;
        let mut drng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthetic-domain", key));
        let j = spec.domain_jitter;
        let gain = spec.amplitude * (1.0 + j * drng.random_range(-1.0..=1.0));
        let phase = j * drng.random_range(-PI..=PI);
        let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(
            spec.seed,
            "synthetic-noise",
            key * 3 + stage.index() as u64,
        ));
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        let tone = spec.tone_table.tone(stage, axis);
        let samples = (0..n)
            .map(|t| {
                let clean = tone.map_or(0.0, |f| {
                    gain * (2.0 * PI * f * t as f64 / spec.sample_rate_hz + phase).sin()
                });
                let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut nrng) } else { 0.0 };
                clean + eps
            })
            .collect();
        axes.push((axis, samples));
    }
    SensorRecording::new(domain, stage, domain, spec.sample_rate_hz, axes)
}

/// Index over `num_domains` domains x three stages, each entry regenerated
/// on read.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetIndex, DatasetError> {
    spec.validate()?;
    let shared = Arc::new(spec.clone());
    let entries = (1..=spec.num_domains)
        .flat_map(|d| Stage::ALL.into_iter().map(move |s| (d, s)))
        .map(|(domain, stage)| IndexEntry {
            domain,
            stage,
            condition: domain,
            sample_rate_hz: spec.sample_rate_hz,
            location: Location::Synthetic(shared.clone()),
        })
        .collect();
    Ok(DatasetIndex {
        source: Source::Synthetic,
        sample_rate_hz: spec.sample_rate_hz,
        samples_per_recording: spec.samples_per_recording,
        entries,
    })
}

/// Writes every recording of `index` as CSV under `dir` plus a
/// `manifest.json`; returns the manifest path.
pub fn write_dataset(index: &DatasetIndex, dir: &Path) -> Result<PathBuf, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut entries = Vec::with_capacity(index.len());
    for e in &index.entries {
        let rec = read_recording::<f64>(e)?;
        let name = format!("d{:02}_{}_c{}.csv", e.domain, e.stage, e.condition);
        write_recording_csv(&dir.join(&name), &rec)?;
        entries.push(ManifestEntry {
            domain: e.domain,
            stage: e.stage,
            condition: e.condition,
            path: name,
        });
    }
    let path = dir.join("manifest.json");
    write_manifest(
        &path,
        &Manifest {
            version: MANIFEST_VERSION,
            sample_rate_hz: index.sample_rate_hz,
            samples_per_recording: Some(index.samples_per_recording),
            entries,
        },
    )?;
    Ok(path)
}
