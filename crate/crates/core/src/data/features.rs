//! Per-sample feature preparation: extraction from WAV, the on-disk cache,
//! and the in-memory matrices the training loop consumes.
//!
//! Feature values are rounded through `f32` (the cache precision) before
//! use, so training behaves bit-identically whether features come from the
//! cache or are extracted in-process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dsp::{
    cqt_spectrogram, gammatone_spectrogram, load_audio, mel_spectrogram, read_feature,
    write_feature, CachedFeature, SpectrogramConfig, Waveform,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::view::View;

use super::{DataError, Manifest, Record, Result};

/// Row-major `frames x bands` feature matrix; raw waveforms use `bands = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<F: Scalar> {
    pub frames: usize,
    pub bands: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> FeatureMatrix<F> {
    fn from_f32(frames: usize, bands: usize, data: &[f32]) -> Self {
        FeatureMatrix { frames, bands, data: data.iter().map(|&v| F::cast(v as f64)).collect() }
    }

    /// Network input for a segment starting at `offset`: `(seg, bands, 1)`
    /// for spectral views, `(seg, 1, 1)` for raw.
    pub fn input_tensor(&self, view: View, offset: usize, seg_len: usize) -> Tensor<F> {
        let lo = offset * self.bands;
        let hi = (offset + seg_len) * self.bands;
        let data = self.data[lo..hi].to_vec();
        if view == View::Raw {
            Tensor::new(vec![seg_len, 1, 1], data)
        } else {
            Tensor::new(vec![seg_len, self.bands, 1], data)
        }
    }
}

/// All views of one example plus its label and duration.
#[derive(Clone, Debug)]
pub struct SampleFeatures<F: Scalar> {
    pub label: usize,
    pub views: BTreeMap<View, FeatureMatrix<F>>,
    pub duration_sec: f64,
}

impl<F: Scalar> SampleFeatures<F> {
    pub fn view(&self, view: View) -> &FeatureMatrix<F> {
        self.views.get(&view).expect("view not prepared")
    }

    /// Number of inference segments for this example.
    pub fn n_infer_segments(&self) -> usize {
        (self.duration_sec.round() as usize).max(1)
    }
}

/// Which views to prepare and with what spectral parameters.
#[derive(Clone, Debug)]
pub struct FeaturePlan {
    pub views: Vec<View>,
    spectro: BTreeMap<View, SpectrogramConfig>,
}

impl FeaturePlan {
    pub fn new(views: &[View], mut cfg_of: impl FnMut(View) -> SpectrogramConfig) -> Self {
        let spectro = views
            .iter()
            .filter(|v| v.is_spectral())
            .map(|&v| (v, cfg_of(v)))
            .collect();
        FeaturePlan { views: views.to_vec(), spectro }
    }

    fn config(&self, view: View) -> &SpectrogramConfig {
        &self.spectro[&view]
    }
}

/// Substitute the `{view}` placeholder in a manifest path.
pub fn view_path(record_path: &str, view: View) -> String {
    record_path.replace("{view}", view.name())
}

/// Cache location for one (record, view) pair under a cache root.
pub fn cache_path(cache_dir: &Path, record: &Record, view: View) -> PathBuf {
    let mut rel = view_path(&record.path, view);
    rel.push_str(".bcfv");
    cache_dir.join(view.name()).join(rel)
}

fn extract_view<F: Scalar>(
    w: &Waveform<F>,
    view: View,
    plan: &FeaturePlan,
) -> Result<(usize, usize, Vec<f32>)> {
    Ok(match view {
        View::Raw => {
            (w.len(), 1, w.samples.iter().map(|&v| v.as_f64() as f32).collect())
        }
        View::Mel => {
            let s = mel_spectrogram(w, plan.config(view))?;
            (s.frames(), s.bands(), s.data().iter().map(|&v| v.as_f64() as f32).collect())
        }
        View::Gammatone => {
            let s = gammatone_spectrogram(w, plan.config(view))?;
            (s.frames(), s.bands(), s.data().iter().map(|&v| v.as_f64() as f32).collect())
        }
        View::Cqt => {
            let s = cqt_spectrogram(w, plan.config(view))?;
            (s.frames(), s.bands(), s.data().iter().map(|&v| v.as_f64() as f32).collect())
        }
    })
}

/// Duration in seconds implied by a cached/extracted feature matrix.
fn duration_of(view: View, frames: usize, sample_rate: u32, plan: &FeaturePlan) -> f64 {
    match view {
        View::Raw => frames as f64 / sample_rate as f64,
        View::Cqt => {
            let hop = plan.config(view).cqt_hop_samples(sample_rate);
            (frames * hop) as f64 / sample_rate as f64
        }
        _ => {
            let cfg = plan.config(view);
            let win = cfg.window_samples(sample_rate);
            let hop = cfg.hop_samples(sample_rate);
            ((frames - 1) * hop + win) as f64 / sample_rate as f64
        }
    }
}

/// Prepare one record: read cached features when available, extract the rest
/// from audio (optionally writing the cache back).
pub fn extract_sample<F: Scalar>(
    manifest: &Manifest,
    record: &Record,
    plan: &FeaturePlan,
    cache_dir: Option<&Path>,
    write_cache: bool,
) -> Result<SampleFeatures<F>> {
    let mut wavs: BTreeMap<String, Waveform<f64>> = BTreeMap::new();
    let mut views = BTreeMap::new();
    let mut duration: Option<(View, usize, u32)> = None;

    for &view in &plan.views {
        let cached: Option<CachedFeature> = match cache_dir {
            Some(dir) => {
                let p = cache_path(dir, record, view);
                p.exists().then(|| read_feature(&p)).transpose()?
            }
            None => None,
        };
        let (frames, bands, data, rate) = match cached {
            Some(c) => {
                if c.view != view {
                    return Err(DataError::Dsp(crate::dsp::DspError::Cache(format!(
                        "cache holds view {}, expected {view}",
                        c.view
                    ))));
                }
                (c.frames as usize, c.bands as usize, c.data, c.sample_rate)
            }
            None => {
                let rel = view_path(&record.path, view);
                let wav = match wavs.get(&rel) {
                    Some(w) => w,
                    None => {
                        let w = load_audio::<f64>(&manifest.root.join(&rel))?;
                        wavs.entry(rel.clone()).or_insert(w)
                    }
                };
                let rate = wav.sample_rate;
                let (frames, bands, data) = extract_view(wav, view, plan)?;
                if write_cache {
                    if let Some(dir) = cache_dir {
                        write_feature(
                            &cache_path(dir, record, view),
                            &CachedFeature {
                                view,
                                frames: frames as u32,
                                bands: bands as u32,
                                sample_rate: rate,
                                data: data.clone(),
                            },
                        )?;
                    }
                }
                (frames, bands, data, rate)
            }
        };
        // Duration priority: raw, then the first spectral view.
        if view == View::Raw || duration.is_none() {
            duration = Some((view, frames, rate));
        }
        views.insert(view, FeatureMatrix::from_f32(frames, bands, &data));
    }

    let (dv, df, dr) = duration.expect("plan has at least one view");
    Ok(SampleFeatures {
        label: record.label,
        views,
        duration_sec: duration_of(dv, df, dr, plan),
    })
}

/// Prepare a single standalone audio file (no manifest, no cache).
pub fn extract_file<F: Scalar>(path: &Path, plan: &FeaturePlan) -> Result<SampleFeatures<F>> {
    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let manifest = Manifest {
        records: Vec::new(),
        class_names: vec!["unknown".into()],
        n_folds: 1,
        root,
    };
    let record = Record { path: name, label: 0, fold: 0, source: "file".into() };
    extract_sample(&manifest, &record, plan, None, false)
}

/// Prepare many records in parallel, in manifest order.
pub fn prepare_features<F: Scalar>(
    manifest: &Manifest,
    indices: &[usize],
    plan: &FeaturePlan,
    cache_dir: Option<&Path>,
) -> Result<Vec<SampleFeatures<F>>> {
    indices
        .par_iter()
        .map(|&i| extract_sample(manifest, &manifest.records[i], plan, cache_dir, false))
        .collect()
}

/// Extract every (record, view) pair into the cache. Returns how many
/// features were written (existing cache entries are kept).
pub fn extract_to_cache(
    manifest: &Manifest,
    plan: &FeaturePlan,
    cache_dir: &Path,
) -> Result<usize> {
    let written: Vec<usize> = manifest
        .records
        .par_iter()
        .map(|record| {
            let missing = plan
                .views
                .iter()
                .filter(|&&v| !cache_path(cache_dir, record, v).exists())
                .count();
            extract_sample::<f64>(manifest, record, plan, Some(cache_dir), true)?;
            Ok(missing)
        })
        .collect::<Result<_>>()?;
    Ok(written.iter().sum())
}
