//! Fixed-length segment selection along a view's time axis.
//!
//! Training draws one uniformly random crop per example; inference takes `S`
//! segments with start offsets evenly spaced over `[0, len - seg_len]`.

use rand::Rng;

use super::{DspError, Result};

/// One uniformly random crop offset.
pub fn train_offset(len: usize, seg_len: usize, rng: &mut impl Rng) -> Result<usize> {
    check(len, seg_len)?;
    Ok(if len == seg_len { 0 } else { rng.random_range(0..=len - seg_len) })
}

/// `n_segments` start offsets evenly spaced over the admissible range,
/// rounded to integers.
pub fn infer_offsets(len: usize, seg_len: usize, n_segments: usize) -> Result<Vec<usize>> {
    check(len, seg_len)?;
    let n = n_segments.max(1);
    let span = (len - seg_len) as f64;
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n)
        .map(|i| (span * i as f64 / (n - 1) as f64).round() as usize)
        .collect())
}

fn check(len: usize, seg_len: usize) -> Result<()> {
    if seg_len == 0 {
        return Err(DspError::Config("segment length must be positive".into()));
    }
    if len < seg_len {
        return Err(DspError::TooShort(format!(
            "length {len} is shorter than the segment length {seg_len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_second_clip_five_segments() {
        let offsets = infer_offsets(249, 75, 5).unwrap();
        assert_eq!(offsets.len(), 5);
        assert_eq!(offsets[0], 0);
        assert_eq!(*offsets.last().unwrap(), 174);
    }

    #[test]
    fn degenerate_range_repeats_offset_zero() {
        let offsets = infer_offsets(75, 75, 4).unwrap();
        assert_eq!(offsets, vec![0, 0, 0, 0]);
    }

    #[test]
    fn offsets_match_linspace_rounding() {
        // 1499 mel frames, segment 75, 30 segments: round(i * 1424 / 29).
        let offsets = infer_offsets(1499, 75, 30).unwrap();
        let expect: Vec<usize> = (0..30)
            .map(|i| (1424.0 * i as f64 / 29.0).round() as usize)
            .collect();
        assert_eq!(offsets, expect);
        assert!(offsets.windows(2).all(|p| p[0] <= p[1]));
        assert_eq!(*offsets.last().unwrap(), 1424);
    }

    #[test]
    fn too_short_errors() {
        assert!(infer_offsets(10, 75, 3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(train_offset(10, 75, &mut rng).is_err());
    }

    #[test]
    fn train_offsets_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let off = train_offset(100, 30, &mut rng).unwrap();
            assert!(off <= 70);
        }
    }
}
