//! Triangular Mel filterbank on the HTK mel scale.

use crate::scalar::Scalar;

use super::stft::{bin_freq, stft_magnitudes};
use super::{bank_spectrogram, FilterBank, Result, Spectrogram, SpectrogramConfig, Waveform};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_bands` triangular filters spanning 0 Hz to Nyquist, evaluated at the
/// STFT bin frequencies of a window of `win` samples.
pub fn mel_bank<F: Scalar>(n_bands: usize, win: usize, sample_rate: u32) -> FilterBank<F> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_bins = win / 2 + 1;
    let mel_hi = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(mel_hi * i as f64 / (n_bands + 1) as f64))
        .collect();

    let mut weights = Vec::with_capacity(n_bands);
    for b in 0..n_bands {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let mut w = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let f = bin_freq(k, win, sample_rate);
            let v = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            w.push(F::cast(v));
        }
        weights.push(w);
    }
    FilterBank { center_freqs: edges[1..=n_bands].iter().map(|&f| F::cast(f)).collect(), weights }
}

pub fn mel_spectrogram<F: Scalar>(
    w: &Waveform<F>,
    cfg: &SpectrogramConfig,
) -> Result<Spectrogram<F>> {
    cfg.validate()?;
    let win = cfg.window_samples(w.sample_rate);
    let hop = cfg.hop_samples(w.sample_rate);
    let frames = stft_magnitudes(w, win, hop)?;
    let bank = mel_bank(cfg.n_bands, win, w.sample_rate);
    Ok(bank_spectrogram(&frames, &bank, cfg, w.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::super::LOG_FLOOR;
    use super::*;
    use crate::view::View;

    #[test]
    fn bank_is_increasing_and_nonnegative() {
        let bank: FilterBank<f64> = mel_bank(64, 1764, 44100);
        assert_eq!(bank.center_freqs.len(), 64);
        assert!(bank.center_freqs.windows(2).all(|p| p[0] < p[1]));
        assert!(*bank.center_freqs.last().unwrap() <= 22050.0);
        assert!(bank.weights.iter().flatten().all(|&w| w >= 0.0));
        // Every filter has some mass.
        assert!(bank.weights.iter().all(|w| w.iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn paper_shape_30s_44k() {
        let w = Waveform::<f64>::new(vec![0.0; 1_323_000], 44100);
        let s = mel_spectrogram(&w, &SpectrogramConfig::paper(View::Mel)).unwrap();
        assert_eq!((s.frames(), s.bands()), (1499, 64));
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let w = Waveform::<f64>::new(vec![0.0; 44100], 44100);
        let s = mel_spectrogram(&w, &SpectrogramConfig::paper(View::Mel)).unwrap();
        let floor = LOG_FLOOR.ln();
        assert!(s.data().iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn tone_argmax_matches_bank_construction() {
        // The frame-level argmax band of a 1 kHz tone must be the band whose
        // triangle weights the 1 kHz bin the most, read off the bank itself.
        let sr = 44100u32;
        let win = 1764usize;
        let samples: Vec<f64> = (0..sr as usize)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr as f64).sin())
            .collect();
        let w = Waveform::new(samples, sr);
        let s = mel_spectrogram(&w, &SpectrogramConfig::paper(View::Mel)).unwrap();

        let bank: FilterBank<f64> = mel_bank(64, win, sr);
        let bin_1k = (1000.0 * win as f64 / sr as f64).round() as usize;
        let expected = (0..64)
            .max_by(|&a, &b| {
                bank.weights[a][bin_1k].partial_cmp(&bank.weights[b][bin_1k]).unwrap()
            })
            .unwrap();
        for t in 0..s.frames() {
            assert_eq!(s.argmax_band(t), expected, "frame {t}");
        }
    }

    #[test]
    fn scaling_shifts_log_values_by_log_c() {
        let sr = 8000u32;
        let samples: Vec<f64> = (0..8000)
            .map(|i| (2.0 * std::f64::consts::PI * 500.0 * i as f64 / sr as f64).sin() * 0.45)
            .collect();
        let scaled: Vec<f64> = samples.iter().map(|&v| v * 2.0).collect();
        let cfg = SpectrogramConfig::reduced(View::Mel);
        let a = mel_spectrogram(&Waveform::new(samples, sr), &cfg).unwrap();
        let b = mel_spectrogram(&Waveform::new(scaled, sr), &cfg).unwrap();
        let ln2 = 2.0f64.ln();
        let floor = LOG_FLOOR.ln();
        for (&x, &y) in a.data().iter().zip(b.data()) {
            if x > floor + 1.0 {
                assert!((y - x - ln2).abs() < 1e-9, "{x} {y}");
            }
        }
    }
}
