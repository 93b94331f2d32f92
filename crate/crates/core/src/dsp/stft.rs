//! Short-time Fourier transform with a Hann window.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Scalar;

use super::{DspError, Result, Waveform};

/// Magnitude frames of the STFT: `T` rows of `win/2 + 1` bins, where
/// `T = floor((N - win) / hop) + 1`.
pub fn stft_magnitudes<F: Scalar>(
    w: &Waveform<F>,
    win: usize,
    hop: usize,
) -> Result<Vec<Vec<F>>> {
    if w.len() < win {
        return Err(DspError::TooShort(format!(
            "{} samples but the analysis window needs {win}",
            w.len()
        )));
    }
    debug_assert!(hop > 0);
    let n_frames = (w.len() - win) / hop + 1;
    let n_bins = win / 2 + 1;

    let window = hann(win);
    let fft = FftPlanner::<F>::new().plan_fft_forward(win);
    let mut scratch = vec![Complex::new(F::zero(), F::zero()); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(F::zero(), F::zero()); win];

    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(w.samples[start + i] * window[i], F::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        frames.push(buf[..n_bins].iter().map(|c| c.norm()).collect());
    }
    Ok(frames)
}

/// Center frequency in Hz of STFT bin `k` for the given window size.
pub fn bin_freq(k: usize, win: usize, sample_rate: u32) -> f64 {
    k as f64 * sample_rate as f64 / win as f64
}

fn hann<F: Scalar>(n: usize) -> Vec<F> {
    let nf = n as f64;
    (0..n)
        .map(|i| F::cast(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nf).cos()))
        .collect()
}
