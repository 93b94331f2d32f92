//! Binary feature cache, one record per (file, view).
//!
//! Layout, all little-endian: magic `BCFV`, version `u32`, view kind `u8`,
//! `T u32`, `F u32`, sample rate `u32`, then `T * F` `f32` values row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::view::View;

use super::{DspError, Result};

const MAGIC: &[u8; 4] = b"BCFV";
const VERSION: u32 = 1;

/// One cached feature matrix. Raw waveforms are stored with `bands == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedFeature {
    pub view: View,
    pub frames: u32,
    pub bands: u32,
    pub sample_rate: u32,
    pub data: Vec<f32>,
}

pub fn write_feature(path: &Path, feature: &CachedFeature) -> Result<()> {
    let io_err = |source| DspError::Io { path: path.display().to_string(), source };
    if feature.data.len() != (feature.frames * feature.bands) as usize {
        return Err(DspError::Cache(format!(
            "feature data length {} does not match {}x{}",
            feature.data.len(),
            feature.frames,
            feature.bands
        )));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(17 + feature.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(feature.view.code());
    buf.extend_from_slice(&feature.frames.to_le_bytes());
    buf.extend_from_slice(&feature.bands.to_le_bytes());
    buf.extend_from_slice(&feature.sample_rate.to_le_bytes());
    for v in &feature.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)
}

pub fn read_feature(path: &Path) -> Result<CachedFeature> {
    let io_err = |source| DspError::Io { path: path.display().to_string(), source };
    let mut f = std::fs::File::open(path).map_err(io_err)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(io_err)?;

    let fail = |msg: &str| DspError::Cache(format!("{}: {msg}", path.display()));
    if bytes.len() < 21 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let view = View::from_code(bytes[8]).ok_or_else(|| fail("unknown view kind"))?;
    let frames = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
    let bands = u32::from_le_bytes(bytes[13..17].try_into().unwrap());
    let sample_rate = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
    let n = frames as usize * bands as usize;
    if bytes.len() != 21 + n * 4 {
        return Err(fail(&format!("expected {n} samples, file holds {}", (bytes.len() - 21) / 4)));
    }
    let data = bytes[21..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(CachedFeature { view, frames, bands, sample_rate, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("blendcrnn_cache_{name}_{}", std::process::id()));
        p
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let path = tmp("rt.bcfv");
        let feature = CachedFeature {
            view: View::Cqt,
            frames: 3,
            bands: 2,
            sample_rate: 22050,
            data: vec![0.5, -1.25, 3.0e-7, f32::MIN_POSITIVE, 1.0, -0.0],
        };
        write_feature(&path, &feature).unwrap();
        let back = read_feature(&path).unwrap();
        assert_eq!(back, feature);
        assert!(back.data.iter().zip(&feature.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupt_magic_rejected() {
        let path = tmp("bad.bcfv");
        std::fs::write(&path, b"NOPEnope_nope_nope_nope").unwrap();
        assert!(matches!(read_feature(&path), Err(DspError::Cache(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_payload_rejected() {
        let path = tmp("trunc.bcfv");
        let feature = CachedFeature {
            view: View::Mel,
            frames: 4,
            bands: 4,
            sample_rate: 8000,
            data: vec![1.0; 16],
        };
        write_feature(&path, &feature).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_feature(&path).is_err());
        std::fs::remove_file(&path).ok();
    }
}
