//! Audio frontend: WAV loading, STFT, and the four views (log Mel, log
//! Gammatone, log CQT spectrograms, framed raw waveform).
//!
//! All three spectral views share the same construction: a linear transform
//! of STFT or CQT magnitudes followed by a natural log with a floor, so
//! scaling the input waveform by `c > 0` shifts every un-floored output value
//! by exactly `ln c`.

mod cache;
mod cqt;
mod gammatone;
mod mel;
mod segment;
mod stft;
mod wav;

pub use cache::{read_feature, write_feature, CachedFeature};
pub use cqt::{cqt_spectrogram, CqtBank};
pub use gammatone::{gammatone_bank, gammatone_spectrogram};
pub use mel::{mel_bank, mel_spectrogram};
pub use segment::{infer_offsets, train_offset};
pub use stft::stft_magnitudes;
pub use wav::{load_audio, write_wav_mono16};

use thiserror::Error;

use crate::scalar::Scalar;
use crate::view::View;

/// Values are clipped here before the log so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a valid WAV file ({details})")]
    Format { path: String, details: String },
    #[error("{path}: unsupported encoding ({details})")]
    Unsupported { path: String, details: String },
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("invalid spectrogram config: {0}")]
    Config(String),
    #[error("feature cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Waveform<F: Scalar> {
    pub samples: Vec<F>,
    pub sample_rate: u32,
}

impl<F: Scalar> Waveform<F> {
    pub fn new(samples: Vec<F>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// Parameters of one spectral view.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramConfig {
    /// Number of frequency bands `F`.
    pub n_bands: usize,
    /// Analysis window length in seconds (STFT views).
    pub window_len: f64,
    /// Fractional window overlap in `[0, 1)` (STFT views).
    pub overlap: f64,
    pub view: View,
    /// CQT geometric resolution.
    pub cqt_bins_per_octave: usize,
    /// CQT hop in samples; `None` selects the rate-dependent default
    /// (1024 at 44.1 kHz and above, 512 below).
    pub cqt_hop: Option<usize>,
}

impl SpectrogramConfig {
    pub fn new(view: View, n_bands: usize) -> Result<Self> {
        let cfg = SpectrogramConfig {
            n_bands,
            window_len: 0.04,
            overlap: 0.5,
            view,
            cqt_bins_per_octave: 12,
            cqt_hop: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 64-band configuration used at paper scale.
    pub fn paper(view: View) -> Self {
        SpectrogramConfig::new(view, 64).expect("paper config is valid")
    }

    /// 16-band configuration used by the reduced preset. The CQT trades
    /// octave resolution for range so its bins still cover low frequencies.
    pub fn reduced(view: View) -> Self {
        let mut cfg = SpectrogramConfig::new(view, 16).expect("reduced config is valid");
        cfg.cqt_bins_per_octave = 4;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.view == View::Raw {
            return Err(DspError::Config("raw view has no spectrogram config".into()));
        }
        if self.n_bands == 0 {
            return Err(DspError::Config("n_bands must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(DspError::Config(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.window_len <= 0.0 {
            return Err(DspError::Config("window_len must be positive".into()));
        }
        if self.cqt_bins_per_octave == 0 {
            return Err(DspError::Config("cqt_bins_per_octave must be positive".into()));
        }
        if self.cqt_hop == Some(0) {
            return Err(DspError::Config("cqt_hop must be positive".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_len * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        let win = self.window_samples(sample_rate);
        ((win as f64) * (1.0 - self.overlap)).round().max(1.0) as usize
    }

    pub fn cqt_hop_samples(&self, sample_rate: u32) -> usize {
        self.cqt_hop.unwrap_or(if sample_rate >= 44100 { 1024 } else { 512 })
    }
}

/// `T x F` matrix of log-magnitudes plus provenance.
#[derive(Clone, Debug)]
pub struct Spectrogram<F: Scalar> {
    data: Vec<F>,
    frames: usize,
    bands: usize,
    pub config: SpectrogramConfig,
    pub source_rate: u32,
}

impl<F: Scalar> Spectrogram<F> {
    pub(crate) fn new(
        data: Vec<F>,
        frames: usize,
        bands: usize,
        config: SpectrogramConfig,
        source_rate: u32,
    ) -> Self {
        assert_eq!(data.len(), frames * bands);
        Spectrogram { data, frames, bands, config, source_rate }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Row-major `T x F` values.
    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[F] {
        &self.data[t * self.bands..(t + 1) * self.bands]
    }

    /// Index of the strongest band in frame `t`.
    pub fn argmax_band(&self, t: usize) -> usize {
        let row = self.frame(t);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

/// A bank of band filters applied to STFT magnitudes.
#[derive(Clone, Debug)]
pub struct FilterBank<F: Scalar> {
    /// Strictly increasing center frequencies in Hz.
    pub center_freqs: Vec<F>,
    /// Per-band nonnegative weights over the STFT bins.
    pub weights: Vec<Vec<F>>,
}

impl<F: Scalar> FilterBank<F> {
    /// Apply to one magnitude frame.
    pub fn apply(&self, magnitudes: &[F]) -> Vec<F> {
        self.weights
            .iter()
            .map(|w| {
                w.iter()
                    .zip(magnitudes)
                    .fold(F::zero(), |acc, (&w, &m)| acc + w * m)
            })
            .collect()
    }
}

/// Shared tail of the spectral views: apply the bank frame by frame, floor,
/// then take the natural log.
fn bank_spectrogram<F: Scalar>(
    frames: &[Vec<F>],
    bank: &FilterBank<F>,
    cfg: &SpectrogramConfig,
    source_rate: u32,
) -> Spectrogram<F> {
    let floor = F::cast(LOG_FLOOR);
    let bands = bank.weights.len();
    let mut data = Vec::with_capacity(frames.len() * bands);
    for frame in frames {
        for v in bank.apply(frame) {
            data.push(v.max(floor).ln());
        }
    }
    Spectrogram::new(data, frames.len(), bands, cfg.clone(), source_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_and_hop_at_paper_rates() {
        let cfg = SpectrogramConfig::paper(View::Mel);
        assert_eq!(cfg.window_samples(44100), 1764);
        assert_eq!(cfg.hop_samples(44100), 882);
        assert_eq!(cfg.window_samples(22050), 882);
        assert_eq!(cfg.hop_samples(22050), 441);
        assert_eq!(cfg.cqt_hop_samples(44100), 1024);
        assert_eq!(cfg.cqt_hop_samples(22050), 512);
    }

    #[test]
    fn config_validation() {
        assert!(SpectrogramConfig::new(View::Raw, 64).is_err());
        let mut cfg = SpectrogramConfig::paper(View::Mel);
        cfg.overlap = 1.0;
        assert!(cfg.validate().is_err());
        cfg.overlap = 0.5;
        cfg.n_bands = 0;
        assert!(cfg.validate().is_err());
    }
}
