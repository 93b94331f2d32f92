//! Multi-view audio/music classification with adaptive gradient blending.
//!
//! Four view-specific convolutional recurrent subnetworks (log Mel, log
//! Gammatone and log CQT spectrograms, plus raw waveform) feed five
//! classification branches: one per view and one over the concatenated
//! multi-view embedding. During training each branch's loss is weighted by an
//! adaptive generalization/overfitting ratio and the weighted losses are
//! blended into a single training gradient; at inference the five branch
//! distributions form a weighted self-ensemble.
//!
//! The numeric core is generic over [`scalar::Scalar`]; the aliases below fix
//! `f64`, which is what the training pipeline and the CLI use.

pub mod blend;
pub mod cfgfile;
pub mod data;
pub mod dsp;
pub mod net;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod view;

pub use scalar::Scalar;
pub use view::{Branch, View};

/// Default-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Default-precision tape.
pub type Tape = tensor::Tape<f64>;
/// Default-precision gradient map.
pub type Gradients = tensor::Gradients<f64>;
/// Default-precision waveform.
pub type Waveform = dsp::Waveform<f64>;
/// Default-precision spectrogram.
pub type Spectrogram = dsp::Spectrogram<f64>;
/// Default-precision multi-view network.
pub type MultiViewNet = net::MultiViewNet<f64>;
/// Default-precision blend weights.
pub type BlendWeights = blend::BlendWeights<f64>;
/// Default-precision per-branch ledger.
pub type BranchLedger = blend::BranchLedger<f64>;
/// Default-precision sample features.
pub type SampleFeatures = data::SampleFeatures<f64>;
