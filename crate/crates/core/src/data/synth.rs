//! Synthetic multi-view dataset for desk-scale experiments.
//!
//! Classes are built from two binary factors encoded in a multi-tone base
//! signal: factor `a` selects the low-band tone, factor `b` the high-band
//! tone. Each view gets its own WAV file derived from the base by a fixed
//! transform, mixed with noise at a per-view SNR (linear amplitude ratio;
//! SNR 0 is pure noise):
//!
//! * mel: band emphasis, keeps the low band (factor `a` only)
//! * gam: chirp modulation, sweep rate set by factor `b`
//! * cqt: amplitude envelope, AM rate set by factor `b`
//! * raw: passthrough of the full base (both factors)
//!
//! No single view carries both factors cleanly, so the views are
//! complementary by construction. Everything is deterministic in the seed.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::write_wav_mono16;
use crate::view::View;

use super::{write_manifest, DataError, Manifest, Record, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub views: Vec<View>,
    pub samples_per_class: usize,
    /// Per-view signal-to-noise amplitude ratio, aligned with `views`.
    pub snrs: Vec<f64>,
    pub sample_rate: u32,
    pub duration_sec: f64,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_classes: 4,
            views: View::ALL.to_vec(),
            samples_per_class: 40,
            snrs: vec![3.0, 0.0, 3.0, 1.0],
            sample_rate: 8000,
            duration_sec: 1.25,
            n_folds: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |s: String| Err(DataError::Synth(s));
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.views.is_empty() || self.views.len() != self.snrs.len() {
            return fail(format!(
                "{} views but {} snr values",
                self.views.len(),
                self.snrs.len()
            ));
        }
        if self.snrs.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return fail("per-view snr must be finite and >= 0".into());
        }
        if self.samples_per_class == 0 || self.n_folds == 0 {
            return fail("samples_per_class and n_folds must be positive".into());
        }
        if self.sample_rate == 0 || self.duration_sec <= 0.0 {
            return fail("sample_rate and duration must be positive".into());
        }
        Ok(())
    }
}

/// Class factors: bit 0 picks the low tone, bit 1 the high tone. Classes
/// beyond 4 add an extra identifying tone.
fn class_tones(class: usize) -> Vec<f64> {
    let a = class & 1;
    let b = (class >> 1) & 1;
    let mut tones = vec![
        if a == 0 { 330.0 } else { 494.0 },
        if b == 0 { 1319.0 } else { 1976.0 },
    ];
    let extra = class >> 2;
    if extra > 0 {
        tones.push(700.0 + 90.0 * extra as f64);
    }
    tones
}

struct ToneBank {
    low: (f64, f64, f64),  // (freq, phase, amp) of the factor-a tone
    high: (f64, f64, f64), // factor-b tone
    rest: Vec<(f64, f64, f64)>,
}

fn tone_bank(class: usize, rng: &mut ChaCha8Rng) -> ToneBank {
    let tones = class_tones(class);
    let mut draw = |f: f64| {
        // Small per-sample jitter keeps the class non-trivial.
        let freq = f * rng.random_range(0.99..1.01);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.8..1.0);
        (freq, phase, amp)
    };
    ToneBank {
        low: draw(tones[0]),
        high: draw(tones[1]),
        rest: tones[2..].iter().map(|&f| draw(f)).collect(),
    }
}

fn render(tones: &[(f64, f64, f64)], n: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(f, phase, amp) in tones {
        let w = std::f64::consts::TAU * f / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += amp * (w * i as f64 + phase).sin();
        }
    }
    out
}

/// The per-view transform of the base signal.
fn view_signal(view: View, class: usize, bank: &ToneBank, n: usize, sr: f64) -> Vec<f64> {
    let b = (class >> 1) & 1;
    let mut all = vec![bank.low, bank.high];
    all.extend_from_slice(&bank.rest);
    match view {
        // Band emphasis: low band dominates, high band nearly removed.
        View::Mel => {
            let mut low = render(&[bank.low], n, sr);
            let high = render(&[bank.high], n, sr);
            for (l, h) in low.iter_mut().zip(&high) {
                *l += 0.02 * h;
            }
            low
        }
        // Chirp modulation of the full base; sweep rate keyed to factor b.
        View::Gammatone => {
            let base = render(&all, n, sr);
            let beta = if b == 0 { 4.0 } else { 14.0 };
            base.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let t = i as f64 / sr;
                    v * (0.6 + 0.4 * (std::f64::consts::TAU * (2.0 * t + beta * t * t)).cos())
                })
                .collect()
        }
        // Amplitude envelope at a factor-b AM rate.
        View::Cqt => {
            let base = render(&all, n, sr);
            let rate = if b == 0 { 3.0 } else { 7.5 };
            base.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let t = i as f64 / sr;
                    v * (0.55 + 0.45 * (std::f64::consts::TAU * rate * t).cos())
                })
                .collect()
        }
        // Raw passthrough of the full base.
        View::Raw => render(&all, n, sr),
    }
}

fn mix_and_normalize(signal: &[f64], snr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = signal.len();
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sig_peak = signal.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    let mut out: Vec<f64> = signal
        .iter()
        .zip(&noise)
        .map(|(&s, &e)| snr * s / sig_peak + e)
        .collect();
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    for v in &mut out {
        *v *= 0.95 / peak;
    }
    out
}

fn mix64(a: u64, b: u64, c: u64) -> u64 {
    let mut x = a ^ b.rotate_left(17) ^ c.rotate_left(43) ^ 0x9e37_79b9_7f4a_7c15;
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Write the WAV set and manifest under `out_dir`; returns the manifest path.
pub fn synth_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir)
        .map_err(|source| DataError::Io { path: audio_dir.display().to_string(), source })?;

    let n = (spec.duration_sec * spec.sample_rate as f64).round() as usize;
    let sr = spec.sample_rate as f64;
    let mut records = Vec::with_capacity(spec.n_classes * spec.samples_per_class);

    for class in 0..spec.n_classes {
        for idx in 0..spec.samples_per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix64(spec.seed, class as u64, idx as u64));
            let bank = tone_bank(class, &mut rng);
            for (&view, &snr) in spec.views.iter().zip(&spec.snrs) {
                let signal = view_signal(view, class, &bank, n, sr);
                let mixed = mix_and_normalize(&signal, snr, &mut rng);
                let name = format!("c{class}_s{idx:04}_{}.wav", view.name());
                write_wav_mono16(&audio_dir.join(&name), &mixed, spec.sample_rate)?;
            }
            records.push(Record {
                path: format!("audio/c{class}_s{idx:04}_{{view}}.wav"),
                label: class,
                fold: idx % spec.n_folds,
                source: format!("c{class}s{idx:04}"),
            });
        }
    }

    let manifest = Manifest {
        records,
        class_names: (0..spec.n_classes).map(|c| format!("class{c}")).collect(),
        n_folds: spec.n_folds,
        root: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}
