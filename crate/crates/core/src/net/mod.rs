//! Network assembly: 2D CRNNs for the spectral views, the 1D CRNN for the
//! raw view, and the multi-view network with per-view and joint
//! classification branches.

mod checkpoint;
mod crnn;
mod multiview;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use crnn::Subnet;
pub use multiview::{ForwardOutput, MultiViewNet, Scope, ViewInputs};

use thiserror::Error;

use crate::dsp::SpectrogramConfig;
use crate::tensor::TensorError;
use crate::view::View;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("no input provided for view {0}")]
    MissingInput(View),
    #[error("{view} input shape {got:?}, expected {expected:?}")]
    BadInput { view: View, expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Full Table-1/Table-2 dimensions.
    Paper,
    /// Desk-scale preset: 16 bands, quartered filter counts, 32-unit GRU.
    Reduced,
}

impl Scale {
    pub fn code(self) -> u8 {
        match self {
            Scale::Paper => 0,
            Scale::Reduced => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Scale> {
        match c {
            0 => Some(Scale::Paper),
            1 => Some(Scale::Reduced),
            _ => None,
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "reduced" => Ok(Scale::Reduced),
            other => Err(format!("unknown scale: {other}")),
        }
    }
}

/// What to build: class count, active views, scale preset, and the sample
/// rate the raw front end is sized for.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub n_classes: usize,
    /// Active views in canonical order (mel, gam, cqt, raw).
    pub views: Vec<View>,
    pub scale: Scale,
    pub sample_rate: u32,
    pub dropout: f64,
    pub init_seed: u64,
}

impl NetworkConfig {
    pub fn new(n_classes: usize, views: &[View], scale: Scale, sample_rate: u32) -> Result<Self> {
        let cfg = NetworkConfig {
            n_classes,
            views: canonical_views(views),
            scale,
            sample_rate,
            dropout: 0.1,
            init_seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(NetError::Config("view set is empty".into()));
        }
        if self.n_classes < 2 {
            return Err(NetError::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.sample_rate == 0 {
            return Err(NetError::Config("sample rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Segment length fed to the subnet for a view: frames for the spectral
    /// views, samples for raw.
    pub fn segment_len(&self, view: View) -> usize {
        match (self.scale, view) {
            (Scale::Paper, View::Mel | View::Gammatone) => 75,
            (Scale::Paper, View::Cqt) => 65,
            (Scale::Paper, View::Raw) => {
                if self.sample_rate >= 44100 {
                    66650
                } else {
                    33330
                }
            }
            (Scale::Reduced, View::Raw) => 4096,
            (Scale::Reduced, _) => 16,
        }
    }

    pub fn n_bands(&self) -> usize {
        match self.scale {
            Scale::Paper => 64,
            Scale::Reduced => 16,
        }
    }

    /// Extraction config for a spectral view at this scale.
    pub fn spectro_config(&self, view: View) -> SpectrogramConfig {
        match self.scale {
            Scale::Paper => SpectrogramConfig::paper(view),
            Scale::Reduced => SpectrogramConfig::reduced(view),
        }
    }

    pub(crate) fn dims(&self) -> Dims {
        match self.scale {
            Scale::Paper => Dims {
                filters_2d: vec![32, 64, 128, 128, 256, 512],
                gru_hidden: 256,
                attn_dim: 64,
                fc_subnet: vec![1024, 1024],
                fc_joint: vec![4096, 4096],
                conv01: FrontSpec { kernel: 64, stride: 2, filters: 32 },
                conv02: FrontSpec { kernel: 16, stride: 2, filters: 64 },
                pool02: if self.sample_rate >= 44100 { 64 } else { 32 },
                conv1_filters: 32,
                raw_tail_filters: vec![64, 128, 128, 256, 512],
            },
            Scale::Reduced => Dims {
                filters_2d: vec![8, 16, 32, 32],
                gru_hidden: 32,
                attn_dim: 16,
                fc_subnet: vec![128, 128],
                fc_joint: vec![256, 256],
                conv01: FrontSpec { kernel: 16, stride: 2, filters: 8 },
                conv02: FrontSpec { kernel: 8, stride: 2, filters: 16 },
                pool02: 16,
                conv1_filters: 8,
                raw_tail_filters: vec![16, 32, 32],
            },
        }
    }
}

/// Deduplicate and order views canonically.
pub fn canonical_views(views: &[View]) -> Vec<View> {
    View::ALL.into_iter().filter(|v| views.contains(v)).collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FrontSpec {
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
}

/// Scale-dependent layer dimensions.
#[derive(Clone, Debug)]
pub(crate) struct Dims {
    pub filters_2d: Vec<usize>,
    pub gru_hidden: usize,
    pub attn_dim: usize,
    pub fc_subnet: Vec<usize>,
    pub fc_joint: Vec<usize>,
    pub conv01: FrontSpec,
    pub conv02: FrontSpec,
    pub pool02: usize,
    pub conv1_filters: usize,
    pub raw_tail_filters: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_dedup() {
        let v = canonical_views(&[View::Raw, View::Mel, View::Raw]);
        assert_eq!(v, vec![View::Mel, View::Raw]);
    }

    #[test]
    fn empty_view_set_rejected() {
        assert!(NetworkConfig::new(4, &[], Scale::Reduced, 8000).is_err());
    }

    #[test]
    fn paper_segment_lengths() {
        let cfg = NetworkConfig::new(50, &View::ALL, Scale::Paper, 44100).unwrap();
        assert_eq!(cfg.segment_len(View::Mel), 75);
        assert_eq!(cfg.segment_len(View::Cqt), 65);
        assert_eq!(cfg.segment_len(View::Raw), 66650);
        let cfg = NetworkConfig::new(10, &View::ALL, Scale::Paper, 22050).unwrap();
        assert_eq!(cfg.segment_len(View::Raw), 33330);
        assert_eq!(cfg.dims().pool02, 32);
    }
}
