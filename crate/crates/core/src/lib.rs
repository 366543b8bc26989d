//! Two-stream LSTM fusion models for classifying sequences of per-frame CNN
//! features.
//!
//! Each video is described by two feature streams: activations of a CNN's
//! last convolutional layer and of its first fully connected layer. Four
//! architectures map these to class probabilities (see [`model`]); all are
//! trained end to end with exact backpropagation through time.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod train;
pub mod wide;

pub use error::{Error, ErrorKind, Result};
pub use eval::{aggregate_cv, evaluate, ConfusionMatrix, CvSummary, Metrics};
pub use lstm::{LstmCache, LstmParams, RunMode};
pub use model::{ConvPooling, FeatureStream, FusionModel, Gradients, Mode, ModelConfig, Sample, Variant};
pub use rng::{Init, Rng};
pub use sampling::{select_frame_indices, subsample_sequence, ShortVideo};
pub use tensor::Tensor;
pub use train::{train, Hyperparams, OptimizerKind, TrainHistory, TrainOptions};
