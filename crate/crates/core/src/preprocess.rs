//! Z-score standardization, train-fitted RMS scaling and fixed-length
//! windowing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Axis, Stage, UnknownAxis};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("signal has {0} samples, need at least 2")]
    TooShort(usize),
    #[error("signal has zero variance")]
    DegenerateSignal,
    #[error("signal contains non-finite values")]
    NonFinite,
    #[error("axis {0} has no training samples")]
    EmptyAxis(Axis),
    #[error("axis {0} is identically zero")]
    ZeroSignal(Axis),
    #[error("normalizer is not a fitted RMS normalizer")]
    NotFitted,
    #[error(transparent)]
    UnknownAxis(#[from] UnknownAxis),
    #[error("signal of {len} samples is shorter than window {length}")]
    EmptyResult { len: usize, length: usize },
    #[error("window length must be at least 1")]
    InvalidLength,
}

/// Signal conditioning applied before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preprocessing {
    Zscore,
    Rms,
    None,
}

impl Preprocessing {
    pub fn tag(self) -> &'static str {
        match self {
            Preprocessing::Zscore => "zscore",
            Preprocessing::Rms => "rms",
            Preprocessing::None => "none",
        }
    }
}

fn mean_std(signal: &[f64]) -> (f64, f64) {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(x - mean) / std` with the population standard deviation of this one
/// signal. Statistics are accumulated in `f64`.
pub fn standardize<T: Scalar>(signal: &[T]) -> Result<Vec<T>, PreprocessError> {
    if signal.len() < 2 {
        return Err(PreprocessError::TooShort(signal.len()));
    }
    let xs: Vec<f64> = signal.iter().map(|v| v.as_f64()).collect();
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFinite);
    }
    let (mean, std) = mean_std(&xs);
    if std == 0.0 || !std.is_finite() {
        return Err(PreprocessError::DegenerateSignal);
    }
    Ok(xs.into_iter().map(|v| T::of((v - mean) / std)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormKind {
    Zscore,
    Rms,
}

/// Fitted normalization state. Z-score carries nothing; RMS carries one
/// divisor per axis computed from training recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: NormKind,
    #[serde(default)]
    pub rms_value: BTreeMap<Axis, f64>,
    #[serde(default)]
    pub fitted: bool,
}

impl Normalizer {
    pub fn zscore() -> Self {
        Self {
            kind: NormKind::Zscore,
            rms_value: BTreeMap::new(),
            fitted: true,
        }
    }

    pub fn apply<T: Scalar>(&self, signal: &[T], axis: Axis) -> Result<Vec<T>, PreprocessError> {
        match self.kind {
            NormKind::Zscore => standardize(signal),
            NormKind::Rms => apply_rms(self, signal, axis),
        }
    }
}

/// Per-axis RMS over the concatenation of that axis's training signals.
pub fn fit_rms<T: Scalar>(train: &[(Axis, Vec<&[T]>)]) -> Result<Normalizer, PreprocessError> {
    let mut rms_value = BTreeMap::new();
    for (axis, signals) in train {
        let mut sq = 0.0f64;
        let mut n = 0usize;
        for s in signals {
            for v in s.iter() {
                let v = v.as_f64();
                if !v.is_finite() {
                    return Err(PreprocessError::NonFinite);
                }
                sq += v * v;
            }
            n += s.len();
        }
        if n == 0 {
            return Err(PreprocessError::EmptyAxis(*axis));
        }
        if sq == 0.0 {
            return Err(PreprocessError::ZeroSignal(*axis));
        }
        rms_value.insert(*axis, (sq / n as f64).sqrt());
    }
    Ok(Normalizer {
        kind: NormKind::Rms,
        rms_value,
        fitted: true,
    })
}

pub fn apply_rms<T: Scalar>(norm: &Normalizer, signal: &[T], axis: Axis) -> Result<Vec<T>, PreprocessError> {
    if norm.kind != NormKind::Rms || !norm.fitted {
        return Err(PreprocessError::NotFitted);
    }
    let rms = *norm
        .rms_value
        .get(&axis)
        .ok_or_else(|| UnknownAxis(axis.name().to_string()))?;
    let r = T::of(rms);
    Ok(signal.iter().map(|&v| v / r).collect())
}

/// `apply_rms` with the axis given by name.
pub fn apply_rms_named<T: Scalar>(norm: &Normalizer, signal: &[T], axis: &str) -> Result<Vec<T>, PreprocessError> {
    apply_rms(norm, signal, axis.parse()?)
}

/// A fixed-length slice of one axis of one recording. Its source offset is
/// `window_index * samples.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub samples: Vec<T>,
    pub label: Stage,
    pub domain_id: u32,
    pub axis: Axis,
    pub window_index: usize,
}

/// Non-overlapping windows of `length`; the `len % length` tail is dropped.
pub fn window<T: Scalar>(
    signal: &[T],
    length: usize,
    label: Stage,
    domain_id: u32,
    axis: Axis,
) -> Result<Vec<Window<T>>, PreprocessError> {
    if length == 0 {
        return Err(PreprocessError::InvalidLength);
    }
    if signal.len() < length {
        return Err(PreprocessError::EmptyResult {
            len: signal.len(),
            length,
        });
    }
    Ok(signal
        .chunks_exact(length)
        .enumerate()
        .map(|(i, chunk)| Window {
            samples: chunk.to_vec(),
            label,
            domain_id,
            axis,
            window_index: i,
        })
        .collect())
}
