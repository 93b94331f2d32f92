//! PCM WAV reading and writing.
//!
//! Readable encodings: 8/16/24-bit integer PCM and 32-bit float. Multi-channel
//! files are reduced to mono by averaging the channels; integer samples are
//! scaled into `[-1, 1]` by the full scale of their bit width.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::scalar::Scalar;

use super::{DspError, Result, Waveform};

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn map_hound(path: &Path, e: hound::Error) -> DspError {
    match e {
        hound::Error::IoError(source) => DspError::Io { path: path_str(path), source },
        hound::Error::Unsupported => DspError::Unsupported {
            path: path_str(path),
            details: "feature not supported by the WAV reader".into(),
        },
        other => DspError::Format { path: path_str(path), details: other.to_string() },
    }
}

pub fn load_audio<F: Scalar>(path: &Path) -> Result<Waveform<F>> {
    let mut reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(DspError::Format { path: path_str(path), details: "zero channels".into() });
    }
    let channels = spec.channels as usize;

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24)) => {
            let scale = 1.0 / f64::from(1i32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale).map_err(|e| map_hound(path, e)))
                .collect::<Result<_>>()?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from).map_err(|e| map_hound(path, e)))
            .collect::<Result<_>>()?,
        (format, bits) => {
            return Err(DspError::Unsupported {
                path: path_str(path),
                details: format!("{bits}-bit {format:?} PCM"),
            })
        }
    };

    // Average interleaved channels into mono. A trailing partial frame (a
    // truncated file that still parsed) is dropped.
    let n_frames = interleaved.len() / channels;
    let inv = 1.0 / channels as f64;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in interleaved.chunks_exact(channels) {
        samples.push(F::cast(frame.iter().sum::<f64>() * inv));
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write a mono 16-bit PCM WAV. Values are clamped to `[-1, 1]`.
pub fn write_wav_mono16<F: Scalar>(path: &Path, samples: &[F], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let v = s.as_f64().clamp(-1.0, 1.0);
        let q = (v * 32767.0).round() as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
