//! Turning windows into model inputs: one axis, axes stacked as channels, or
//! axes interleaved into a single-channel stream. Plus batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Axis, Stage};
use crate::nn::Tensor;
use crate::preprocess::Window;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("expected windows from axis {expected}, got {found}")]
    AxisMismatch { expected: Axis, found: Axis },
    #[error("axes are not aligned: {0}")]
    UnalignedAxes(String),
    #[error("window {index}: axes disagree on the label")]
    LabelConflict { index: usize },
    #[error("sample {index} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("label {0} is not one of the selected classes")]
    UnknownClass(Stage),
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoadingStrategy {
    SingleSource,
    Parallel,
    SelectiveEmbedding,
}

impl LoadingStrategy {
    pub fn tag(self) -> &'static str {
        match self {
            LoadingStrategy::SingleSource => "single",
            LoadingStrategy::Parallel => "parallel",
            LoadingStrategy::SelectiveEmbedding => "selective",
        }
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub domain_id: u32,
    pub axes: Vec<Axis>,
    pub window_index: usize,
}

/// A `channels x length` input, row-major, with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample<T> {
    pub data: Vec<T>,
    pub channels: usize,
    pub length: usize,
    pub label: Stage,
    pub provenance: Provenance,
}

impl<T: Scalar> LoadedSample<T> {
    fn from_window(w: &Window<T>) -> Self {
        Self {
            data: w.samples.clone(),
            channels: 1,
            length: w.samples.len(),
            label: w.label,
            provenance: Provenance {
                domain_id: w.domain_id,
                axes: vec![w.axis],
                window_index: w.window_index,
            },
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.length..(c + 1) * self.length]
    }
}

pub fn load_single_source<T: Scalar>(windows: &[Window<T>], axis: Axis) -> Result<Vec<LoadedSample<T>>, LoadError> {
    windows
        .iter()
        .map(|w| {
            if w.axis != axis {
                return Err(LoadError::AxisMismatch {
                    expected: axis,
                    found: w.axis,
                });
            }
            Ok(LoadedSample::from_window(w))
        })
        .collect()
}

/// Checks that every group holds one axis and that window `i` of each group
/// comes from the same recording position.
fn check_aligned<T>(groups: &[Vec<Window<T>>]) -> Result<usize, LoadError> {
    let Some(first) = groups.first() else {
        return Ok(0);
    };
    let count = first.len();
    for (g, group) in groups.iter().enumerate() {
        if group.len() != count {
            return Err(LoadError::UnalignedAxes(format!(
                "group {g} has {} windows, group 0 has {count}",
                group.len()
            )));
        }
        if let Some(w0) = group.first() {
            if let Some(bad) = group.iter().find(|w| w.axis != w0.axis) {
                return Err(LoadError::AxisMismatch {
                    expected: w0.axis,
                    found: bad.axis,
                });
            }
        }
    }
    for i in 0..count {
        let a = &first[i];
        for group in &groups[1..] {
            let b = &group[i];
            if (a.domain_id, a.window_index) != (b.domain_id, b.window_index) {
                return Err(LoadError::UnalignedAxes(format!(
                    "position {i}: domain {} window {} vs domain {} window {}",
                    a.domain_id, a.window_index, b.domain_id, b.window_index
                )));
            }
        }
    }
    Ok(count)
}

/// Stacks aligned axes as channels: sample `i` has channel `c` = window `i`
/// of group `c`.
pub fn load_parallel<T: Scalar>(groups: &[Vec<Window<T>>]) -> Result<Vec<LoadedSample<T>>, LoadError> {
    let count = check_aligned(groups)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let head = &groups[0][i];
        if groups.iter().any(|g| g[i].label != head.label) {
            return Err(LoadError::LabelConflict { index: i });
        }
        let length = head.samples.len();
        let mut data = Vec::with_capacity(groups.len() * length);
        for g in groups {
            if g[i].samples.len() != length {
                return Err(LoadError::UnalignedAxes(format!("position {i}: window lengths differ")));
            }
            data.extend_from_slice(&g[i].samples);
        }
        out.push(LoadedSample {
            data,
            channels: groups.len(),
            length,
            label: head.label,
            provenance: Provenance {
                domain_id: head.domain_id,
                axes: groups.iter().map(|g| g[i].axis).collect(),
                window_index: head.window_index,
            },
        });
    }
    Ok(out)
}

/// Interleaves aligned axes window by window: output `i` is window
/// `i / C` of group `i % C`.
pub fn load_selective_embedding<T: Scalar>(groups: &[Vec<Window<T>>]) -> Result<Vec<LoadedSample<T>>, LoadError> {
    let count = check_aligned(groups)?;
    let mut out = Vec::with_capacity(count * groups.len());
    for i in 0..count {
        for g in groups {
            out.push(LoadedSample::from_window(&g[i]));
        }
    }
    Ok(out)
}

/// Model-ready batch: inputs `(n, channels, length)`, class indices, and the
/// positions of its samples in the source list.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Position of `stage` in `classes`, the class index used by the models.
pub fn class_index(classes: &[Stage], stage: Stage) -> Result<usize, LoadError> {
    classes
        .iter()
        .position(|&c| c == stage)
        .ok_or(LoadError::UnknownClass(stage))
}

/// Orders samples (a seeded permutation, or input order for `None`) and cuts
/// them into batches; the last batch may be short.
pub fn make_batches<T: Scalar>(
    samples: &[LoadedSample<T>],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    classes: &[Stage],
) -> Result<Vec<Batch<T>>, LoadError> {
    if batch_size == 0 {
        return Err(LoadError::InvalidBatchSize);
    }
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let shape = (first.channels, first.length);
    let mut labels = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        if (s.channels, s.length) != shape || s.data.len() != shape.0 * shape.1 {
            return Err(LoadError::ShapeMismatch {
                index,
                expected: shape,
                found: (s.channels, s.length),
            });
        }
        labels.push(class_index(classes, s.label)?);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let mut data = Vec::with_capacity(idx.len() * shape.0 * shape.1);
            for &i in idx {
                data.extend_from_slice(&samples[i].data);
            }
            Batch {
                inputs: Tensor::from_vec(&[idx.len(), shape.0, shape.1], data).expect("sizes checked"),
                labels: idx.iter().map(|&i| labels[i]).collect(),
                indices: idx.to_vec(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(axis: Axis, n: usize, len: usize) -> Vec<Window<f64>> {
        (0..n)
            .map(|i| Window {
                samples: (0..len).map(|t| (axis.index() * 1000 + i * 10 + t) as f64).collect(),
                label: if i % 2 == 0 { Stage::BeforeSlag } else { Stage::DuringSlag },
                domain_id: 1,
                axis,
                window_index: i,
            })
            .collect()
    }

    #[test]
    fn single_source() {
        let w = windows(Axis::Y, 62, 512);
        let s = load_single_source(&w, Axis::Y).unwrap();
        assert_eq!(s.len(), 62);
        assert!(s.iter().all(|x| x.channels == 1 && x.length == 512));
        assert!(load_single_source::<f64>(&[], Axis::Y).unwrap().is_empty());
        assert_eq!(
            load_single_source(&windows(Axis::X, 1, 4), Axis::Y),
            Err(LoadError::AxisMismatch { expected: Axis::Y, found: Axis::X })
        );
    }

    #[test]
    fn parallel_stacks_channels() {
        let groups: Vec<_> = Axis::ALL.iter().map(|&a| windows(a, 62, 512)).collect();
        let s = load_parallel(&groups).unwrap();
        assert_eq!(s.len(), 62);
        assert_eq!((s[5].channels, s[5].length), (3, 512));
        assert_eq!(s[5].channel(2), groups[2][5].samples.as_slice());
        let one = load_parallel(&groups[1..2]).unwrap();
        assert_eq!(one, load_single_source(&groups[1], Axis::Y).unwrap());
        let ragged = vec![windows(Axis::X, 62, 8), windows(Axis::Y, 61, 8)];
        assert!(matches!(load_parallel(&ragged), Err(LoadError::UnalignedAxes(_))));
        let mut conflict = vec![windows(Axis::X, 2, 8), windows(Axis::Y, 2, 8)];
        conflict[1][1].label = Stage::EarlyNoSlag;
        assert_eq!(load_parallel(&conflict), Err(LoadError::LabelConflict { index: 1 }));
    }

    #[test]
    fn selective_interleaves() {
        let groups = vec![windows(Axis::X, 2, 4), windows(Axis::Y, 2, 4)];
        let s = load_selective_embedding(&groups).unwrap();
        let order: Vec<(Axis, usize)> = s.iter().map(|x| (x.provenance.axes[0], x.provenance.window_index)).collect();
        assert_eq!(order, vec![(Axis::X, 0), (Axis::Y, 0), (Axis::X, 1), (Axis::Y, 1)]);
        let three: Vec<_> = Axis::ALL.iter().map(|&a| windows(a, 62, 16)).collect();
        assert_eq!(load_selective_embedding(&three).unwrap().len(), 186);
    }

    #[test]
    fn batching() {
        let three: Vec<_> = Axis::ALL.iter().map(|&a| windows(a, 62, 16)).collect();
        let s = load_selective_embedding(&three).unwrap();
        let classes = [Stage::BeforeSlag, Stage::DuringSlag];
        let b = make_batches(&s, 64, None, &classes).unwrap();
        assert_eq!(b.iter().map(|x| x.labels.len()).collect::<Vec<_>>(), vec![64, 64, 58]);
        assert_eq!(b[0].inputs.shape(), &[64, 1, 16]);
        assert_eq!(make_batches(&s[..10], 64, None, &classes).unwrap().len(), 1);
        let a = make_batches(&s, 64, Some(3), &classes).unwrap();
        assert_eq!(a, make_batches(&s, 64, Some(3), &classes).unwrap());
        assert_ne!(a[0].indices, b[0].indices);
        assert_eq!(
            make_batches(&s, 64, None, &[Stage::BeforeSlag]),
            Err(LoadError::UnknownClass(Stage::DuringSlag))
        );
        let mixed = vec![s[0].clone(), load_parallel(&three).unwrap()[0].clone()];
        assert!(matches!(make_batches(&mixed, 4, None, &classes), Err(LoadError::ShapeMismatch { index: 1, .. })));
    }
}
