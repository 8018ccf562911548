//! Slag-detection vibration pipeline: dataset ingest, conditioning, loading
//! strategies, CNN and CNN-LSTM classifiers, training, experiment grids and
//! reporting. Numeric code is generic over `f32`/`f64`; the aliases below
//! pick `f32`, the precision used for training.

pub mod dataset;
pub mod experiments;
pub mod loading;
pub mod models;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod reporting;
pub mod rng;
pub mod scalar;
pub mod training;

pub use scalar::Scalar;

/// Default training precision.
pub type Real = f32;
pub type Recording = dataset::SensorRecording<Real>;
pub type Sample = loading::LoadedSample<Real>;
pub type Network = models::Model<Real>;
pub type Tensor = nn::Tensor<Real>;
