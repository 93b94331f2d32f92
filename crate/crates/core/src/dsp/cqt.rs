//! Constant-Q transform via direct correlation with windowed complex
//! kernels, one per bin, zero-padded around frame centers at `t * hop`.
//!
//! The minimum frequency is the highest 12-TET pitch (A4 = 440 Hz reference)
//! that keeps all bins below Nyquist, so adjacent bins are always an exact
//! `2^(1/bins_per_octave)` apart.

use rustfft::num_complex::Complex;

use crate::scalar::Scalar;

use super::{DspError, Result, Spectrogram, SpectrogramConfig, Waveform, LOG_FLOOR};

/// Complex analysis kernels of one CQT configuration.
pub struct CqtBank<F: Scalar> {
    pub center_freqs: Vec<F>,
    kernels: Vec<Vec<Complex<F>>>,
}

impl<F: Scalar> CqtBank<F> {
    pub fn new(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        let bpo = cfg.cqt_bins_per_octave as f64;
        let span = cfg.n_bands as f64 / bpo;
        let limit = nyquist / 2f64.powf(span);
        if limit <= 0.0 || !limit.is_finite() {
            return Err(DspError::Config(format!(
                "{} bins at {} per octave do not fit below Nyquist {nyquist}",
                cfg.n_bands, cfg.cqt_bins_per_octave
            )));
        }
        let f_min = tet12_at_or_below(limit);
        let q = 1.0 / (2f64.powf(1.0 / bpo) - 1.0);

        let mut center_freqs = Vec::with_capacity(cfg.n_bands);
        let mut kernels = Vec::with_capacity(cfg.n_bands);
        for j in 0..cfg.n_bands {
            let fc = f_min * 2f64.powf(j as f64 / bpo);
            let len = (q * sample_rate as f64 / fc).ceil() as usize;
            let mut kernel = Vec::with_capacity(len);
            let mut wsum = 0.0;
            for t in 0..len {
                wsum += hann_at(t, len);
            }
            for t in 0..len {
                let w = hann_at(t, len) / wsum;
                let phase = -2.0 * std::f64::consts::PI * fc * t as f64 / sample_rate as f64;
                kernel.push(Complex::new(F::cast(w * phase.cos()), F::cast(w * phase.sin())));
            }
            center_freqs.push(F::cast(fc));
            kernels.push(kernel);
        }
        Ok(CqtBank { center_freqs, kernels })
    }

    /// Length of the longest (lowest-frequency) kernel.
    pub fn max_kernel_len(&self) -> usize {
        self.kernels.first().map(|k| k.len()).unwrap_or(0)
    }

    /// Magnitude of bin `j` for a frame centered at `center`.
    fn bin_magnitude(&self, samples: &[F], center: usize, j: usize) -> F {
        let kernel = &self.kernels[j];
        let start = center as isize - (kernel.len() / 2) as isize;
        let mut acc = Complex::new(F::zero(), F::zero());
        for (t, k) in kernel.iter().enumerate() {
            let idx = start + t as isize;
            if idx < 0 || idx >= samples.len() as isize {
                continue;
            }
            let x = samples[idx as usize];
            acc = acc + Complex::new(k.re * x, k.im * x);
        }
        acc.norm()
    }
}

fn hann_at(t: usize, n: usize) -> f64 {
    0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos()
}

/// Highest pitch of the equal-tempered semitone grid (A4 = 440) at or below
/// `limit`.
fn tet12_at_or_below(limit: f64) -> f64 {
    let k = (12.0 * (limit / 440.0).log2()).floor();
    440.0 * 2f64.powf(k / 12.0)
}

pub fn cqt_spectrogram<F: Scalar>(
    w: &Waveform<F>,
    cfg: &SpectrogramConfig,
) -> Result<Spectrogram<F>> {
    let bank = CqtBank::new(cfg, w.sample_rate)?;
    if w.len() < bank.max_kernel_len() {
        return Err(DspError::TooShort(format!(
            "{} samples but the lowest-frequency kernel needs {}",
            w.len(),
            bank.max_kernel_len()
        )));
    }
    let hop = cfg.cqt_hop_samples(w.sample_rate);
    let frames = w.len().div_ceil(hop);
    let floor = F::cast(LOG_FLOOR);
    let mut data = Vec::with_capacity(frames * cfg.n_bands);
    for t in 0..frames {
        let center = t * hop;
        for j in 0..cfg.n_bands {
            let m = bank.bin_magnitude(&w.samples, center, j);
            data.push(m.max(floor).ln());
        }
    }
    Ok(Spectrogram::new(data, frames, cfg.n_bands, cfg.clone(), w.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::View;

    #[test]
    fn adjacent_centers_are_one_semitone_apart() {
        let bank: CqtBank<f64> = CqtBank::new(&SpectrogramConfig::paper(View::Cqt), 44100).unwrap();
        assert_eq!(bank.center_freqs.len(), 64);
        let ratio = 2f64.powf(1.0 / 12.0);
        for pair in bank.center_freqs.windows(2) {
            assert!((pair[1] / pair[0] - ratio).abs() <= 1e-12);
        }
        assert!(*bank.center_freqs.last().unwrap() < 22050.0);
    }

    #[test]
    fn twelve_tet_anchor() {
        // C5 at 44.1 kHz, C4 at 22.05 kHz.
        let b44: CqtBank<f64> = CqtBank::new(&SpectrogramConfig::paper(View::Cqt), 44100).unwrap();
        assert!((b44.center_freqs[0] - 523.2511306011972).abs() < 1e-9);
        let b22: CqtBank<f64> = CqtBank::new(&SpectrogramConfig::paper(View::Cqt), 22050).unwrap();
        assert!((b22.center_freqs[0] - 261.6255653005986).abs() < 1e-9);
    }

    #[test]
    fn paper_shape_30s_44k() {
        let w = Waveform::<f64>::new(vec![0.0; 1_323_000], 44100);
        let s = cqt_spectrogram(&w, &SpectrogramConfig::paper(View::Cqt)).unwrap();
        assert_eq!((s.frames(), s.bands()), (1292, 64));
    }

    #[test]
    fn too_short_for_lowest_kernel() {
        let w = Waveform::<f64>::new(vec![0.0; 512], 44100);
        assert!(matches!(
            cqt_spectrogram(&w, &SpectrogramConfig::paper(View::Cqt)),
            Err(DspError::TooShort(_))
        ));
    }

    #[test]
    fn tone_at_bin_center_wins_that_bin() {
        let sr = 22050u32;
        let cfg = SpectrogramConfig::paper(View::Cqt);
        let bank: CqtBank<f64> = CqtBank::new(&cfg, sr).unwrap();
        let j = 40;
        let fc = bank.center_freqs[j];
        let n = 661_500usize / 10;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * fc * i as f64 / sr as f64).sin() * 0.7)
            .collect();
        let s = cqt_spectrogram(&Waveform::new(samples, sr), &cfg).unwrap();

        let hop = cfg.cqt_hop_samples(sr);
        let margin = bank.max_kernel_len() / 2;
        let mut interior = 0;
        for t in 0..s.frames() {
            let center = t * hop;
            if center < margin || center + margin >= n {
                continue;
            }
            interior += 1;
            assert_eq!(s.argmax_band(t), j, "frame {t}");
        }
        assert!(interior > 10);
    }
}
