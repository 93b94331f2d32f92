//! Gammatone filterbank with ERB-spaced centers (Glasberg-Moore), realized
//! as 4th-order magnitude responses over the STFT bins. Sharing the STFT with
//! the Mel view keeps the two views frame-aligned.

use crate::scalar::Scalar;

use super::stft::{bin_freq, stft_magnitudes};
use super::{bank_spectrogram, FilterBank, Result, Spectrogram, SpectrogramConfig, Waveform};

const GAMMATONE_ORDER: f64 = 4.0;
const F_MIN_HZ: f64 = 50.0;

/// ERB-rate scale.
fn hz_to_erbs(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn erbs_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth at a center frequency.
fn erb_bandwidth(fc: f64) -> f64 {
    24.7 * (4.37 * fc / 1000.0 + 1.0)
}

/// `n_bands` gammatone magnitude responses evaluated at the STFT bin
/// frequencies. Centers run from 50 Hz to Nyquist, uniformly in ERB-rate.
pub fn gammatone_bank<F: Scalar>(n_bands: usize, win: usize, sample_rate: u32) -> FilterBank<F> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_bins = win / 2 + 1;
    let (e_lo, e_hi) = (hz_to_erbs(F_MIN_HZ), hz_to_erbs(nyquist));
    let centers: Vec<f64> = (0..n_bands)
        .map(|i| erbs_to_hz(e_lo + (e_hi - e_lo) * i as f64 / (n_bands - 1).max(1) as f64))
        .collect();

    let mut weights = Vec::with_capacity(n_bands);
    for &fc in &centers {
        let b = 1.019 * erb_bandwidth(fc);
        let mut w = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let f = bin_freq(k, win, sample_rate);
            let r = (f - fc) / b;
            w.push(F::cast((1.0 + r * r).powf(-GAMMATONE_ORDER / 2.0)));
        }
        weights.push(w);
    }
    FilterBank { center_freqs: centers.into_iter().map(F::cast).collect(), weights }
}

pub fn gammatone_spectrogram<F: Scalar>(
    w: &Waveform<F>,
    cfg: &SpectrogramConfig,
) -> Result<Spectrogram<F>> {
    cfg.validate()?;
    let win = cfg.window_samples(w.sample_rate);
    let hop = cfg.hop_samples(w.sample_rate);
    let frames = stft_magnitudes(w, win, hop)?;
    let bank = gammatone_bank(cfg.n_bands, win, w.sample_rate);
    Ok(bank_spectrogram(&frames, &bank, cfg, w.sample_rate))
}
