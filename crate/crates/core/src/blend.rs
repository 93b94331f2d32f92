//! Adaptive gradient blending: per-branch loss bookkeeping, the
//! generalization and overfitting measures, the adaptive weight, and the
//! blended total loss.
//!
//! Each classification branch keeps two loss histories, one on a fixed
//! training subset and one on the validation set (standing in for the true
//! loss). Both are smoothed over a trailing window. The generalization
//! measure `G` is the best smoothed validation loss seen so far minus the
//! current one; the overfitting measure `O` is the training-loss improvement
//! minus `G`. The branch weight is `G / O^2`, so branches that keep improving
//! on held-out data are trained harder and branches whose training loss falls
//! while validation stalls are damped. Best-loss references adapt during
//! training: they are the running minima of the smoothed histories.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::view::Branch;

/// Lower clamp applied to both measures before forming the ratio.
pub const CLAMP_EPS: f64 = 1e-6;

/// Default smoothing window, in evaluations.
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum BlendError {
    #[error("non-finite probabilities in branch loss")]
    NonFiniteProbs,
    #[error("branch weights must be nonnegative, got {0}")]
    NegativeWeight(f64),
}

/// Mean of the trailing `min(window, len)` entries.
pub fn smooth<F: Scalar>(history: &[F], window: usize) -> F {
    assert!(!history.is_empty(), "smoothing an empty history");
    assert!(window >= 1, "window must be at least 1");
    let n = history.len().min(window);
    let tail = &history[history.len() - n..];
    tail.iter().fold(F::zero(), |acc, &v| acc + v) / F::cast_usize(n)
}

/// Mean cross-entropy of predicted distributions against class labels:
/// `-(1/M) sum_m log p_m[y_m]`.
pub fn branch_loss<F: Scalar>(
    probs: &[F],
    labels: &[usize],
    n_classes: usize,
) -> Result<F, BlendError> {
    assert_eq!(probs.len(), labels.len() * n_classes);
    assert!(!labels.is_empty());
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(BlendError::NonFiniteProbs);
    }
    let mut acc = F::zero();
    for (m, &y) in labels.iter().enumerate() {
        acc = acc - probs[m * n_classes + y].ln();
    }
    Ok(acc / F::cast_usize(labels.len()))
}

/// Everything one adaptive-weight evaluation produced. `g` and `o` are the
/// raw measures before clamping; `raw` is the clamped ratio.
#[derive(Clone, Copy, Debug)]
pub struct AdaptiveWeight<F: Scalar> {
    pub raw: F,
    pub g: F,
    pub o: F,
    pub smoothed_train: F,
    pub smoothed_val: F,
    /// Set on the first evaluation, when both references were just
    /// initialized and the ratio is meaningless. The caller substitutes
    /// uniform weights for that update.
    pub degenerate: bool,
}

/// Loss histories and best-so-far references for one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchLedger<F: Scalar> {
    pub branch: Branch,
    window: usize,
    train_hist: Vec<F>,
    val_hist: Vec<F>,
    best_train: Option<F>,
    best_val: Option<F>,
}

impl<F: Scalar> BranchLedger<F> {
    pub fn new(branch: Branch, window: usize) -> Self {
        assert!(window >= 1, "smoothing window must be at least 1");
        BranchLedger {
            branch,
            window,
            train_hist: Vec::new(),
            val_hist: Vec::new(),
            best_train: None,
            best_val: None,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Number of recorded evaluations.
    pub fn len(&self) -> usize {
        self.train_hist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_hist.is_empty()
    }

    pub fn push(&mut self, train_loss: F, val_loss: F) {
        self.train_hist.push(train_loss);
        self.val_hist.push(val_loss);
    }

    pub fn best_refs(&self) -> (Option<F>, Option<F>) {
        (self.best_train, self.best_val)
    }

    /// One evaluation of the adaptive weight.
    ///
    /// Smooths both histories, forms `G` and `O` against the best references
    /// (initializing them on the first call), clamps both measures to
    /// [`CLAMP_EPS`], returns `G / O^2`, and then folds the smoothed values
    /// into the references. `O` is formed with the un-clamped `G`.
    pub fn adaptive_weight(&mut self) -> AdaptiveWeight<F> {
        assert!(!self.is_empty(), "adaptive weight needs at least one evaluation");
        let s_tr = smooth(&self.train_hist, self.window);
        let s_val = smooth(&self.val_hist, self.window);
        let degenerate = self.best_val.is_none();
        let best_tr = *self.best_train.get_or_insert(s_tr);
        let best_val = *self.best_val.get_or_insert(s_val);

        let g = best_val - s_val;
        let o = (best_tr - s_tr) - g;
        let eps = F::cast(CLAMP_EPS);
        let g_clamped = g.max(eps);
        let o_clamped = o.max(eps);
        let raw = g_clamped / (o_clamped * o_clamped);

        self.best_train = Some(best_tr.min(s_tr));
        self.best_val = Some(best_val.min(s_val));

        AdaptiveWeight { raw, g, o, smoothed_train: s_tr, smoothed_val: s_val, degenerate }
    }

    /// Flat binary image of the ledger (for checkpoint resume).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(branch_code(self.branch));
        out.extend_from_slice(&(self.window as u32).to_le_bytes());
        out.extend_from_slice(&(self.train_hist.len() as u32).to_le_bytes());
        for h in [&self.train_hist, &self.val_hist] {
            for v in h {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        for b in [self.best_train, self.best_val] {
            out.push(b.is_some() as u8);
            out.extend_from_slice(&b.map(|v| v.as_f64()).unwrap_or(0.0).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<(Self, usize)> {
        let mut at = 0;
        let take = |at: &mut usize, n: usize| -> Option<&[u8]> {
            let s = bytes.get(*at..*at + n)?;
            *at += n;
            Some(s)
        };
        let branch = branch_from_code(take(&mut at, 1)?[0])?;
        let window = u32::from_le_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
        let n = u32::from_le_bytes(take(&mut at, 4)?.try_into().ok()?) as usize;
        let read_hist = |at: &mut usize| -> Option<Vec<F>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(F::cast(f64::from_le_bytes(take(at, 8)?.try_into().ok()?)));
            }
            Some(v)
        };
        let train_hist = read_hist(&mut at)?;
        let val_hist = read_hist(&mut at)?;
        let read_best = |at: &mut usize| -> Option<Option<F>> {
            let tag = take(at, 1)?[0];
            let v = f64::from_le_bytes(take(at, 8)?.try_into().ok()?);
            Some((tag == 1).then(|| F::cast(v)))
        };
        let best_train = read_best(&mut at)?;
        let best_val = read_best(&mut at)?;
        Some((
            BranchLedger { branch, window, train_hist, val_hist, best_train, best_val },
            at,
        ))
    }
}

pub(crate) fn branch_code(b: Branch) -> u8 {
    match b {
        Branch::View(v) => v.code(),
        Branch::Joint => 255,
    }
}

pub(crate) fn branch_from_code(code: u8) -> Option<Branch> {
    if code == 255 {
        Some(Branch::Joint)
    } else {
        crate::view::View::from_code(code).map(Branch::View)
    }
}

/// Normalized per-branch weights. `z` is the normalization factor, the sum
/// of the raw inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights<F: Scalar> {
    branches: Vec<Branch>,
    weights: Vec<F>,
    pub z: F,
}

impl<F: Scalar> BlendWeights<F> {
    /// Normalize raw weights to sum to one. All-zero input falls back to
    /// uniform weights.
    pub fn normalize(raw: &[(Branch, F)]) -> Result<Self, BlendError> {
        if let Some(&(_, w)) = raw.iter().find(|(_, w)| *w < F::zero()) {
            return Err(BlendError::NegativeWeight(w.as_f64()));
        }
        let z = raw.iter().fold(F::zero(), |acc, &(_, w)| acc + w);
        let branches: Vec<Branch> = raw.iter().map(|&(b, _)| b).collect();
        if z == F::zero() {
            let mut out = Self::uniform(&branches);
            out.z = z;
            return Ok(out);
        }
        Ok(BlendWeights {
            branches,
            weights: raw.iter().map(|&(_, w)| w / z).collect(),
            z,
        })
    }

    pub fn uniform(branches: &[Branch]) -> Self {
        let k = F::cast_usize(branches.len());
        BlendWeights {
            branches: branches.to_vec(),
            weights: vec![F::one() / k; branches.len()],
            z: F::one(),
        }
    }

    /// All mass on one branch.
    pub fn fixed(branches: &[Branch], active: Branch) -> Self {
        assert!(branches.contains(&active));
        BlendWeights {
            branches: branches.to_vec(),
            weights: branches
                .iter()
                .map(|&b| if b == active { F::one() } else { F::zero() })
                .collect(),
            z: F::one(),
        }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn get(&self, branch: Branch) -> F {
        self.branches
            .iter()
            .position(|&b| b == branch)
            .map(|i| self.weights[i])
            .unwrap_or_else(F::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Branch, F)> + '_ {
        self.branches.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn sum(&self) -> F {
        self.weights.iter().fold(F::zero(), |acc, &w| acc + w)
    }
}

/// Weighted total loss over branch losses using normalized weights.
pub fn blended_loss<F: Scalar>(losses: &[(Branch, F)], weights: &BlendWeights<F>) -> F {
    losses
        .iter()
        .fold(F::zero(), |acc, &(b, l)| acc + weights.get(b) * l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::View;

    const B: Branch = Branch::View(View::Mel);

    #[test]
    fn smooth_examples() {
        assert_eq!(smooth(&[4.0, 2.0], 1), 2.0);
        assert_eq!(smooth(&[4.0, 2.0], 5), 3.0);
        let h = [1.0f64, 0.8, 0.6, 0.4];
        assert!((smooth(&h, 3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn branch_loss_anchors() {
        // Perfect prediction.
        let probs = vec![1.0, 0.0, 0.0];
        assert_eq!(branch_loss(&probs, &[0], 3).unwrap(), 0.0);
        // Uniform over 50 classes.
        let probs = vec![1.0 / 50.0; 50];
        let l: f64 = branch_loss(&probs, &[7], 50).unwrap();
        assert!((l - 50f64.ln()).abs() < 1e-12);
        // Two samples with correct-class probabilities 0.5 and 0.25.
        let probs = vec![0.5, 0.5, 0.25, 0.75];
        let l: f64 = branch_loss(&probs, &[0, 0], 2).unwrap();
        let want = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn branch_loss_rejects_non_finite() {
        let probs = vec![f64::NAN, 1.0];
        assert!(matches!(branch_loss(&probs, &[0], 2), Err(BlendError::NonFiniteProbs)));
    }

    #[test]
    fn first_evaluation_is_degenerate() {
        let mut ledger = BranchLedger::<f64>::new(B, 5);
        ledger.push(2.0, 2.1);
        let w = ledger.adaptive_weight();
        assert!(w.degenerate);
        assert_eq!(w.g, 0.0);
        assert_eq!(w.o, 0.0);
        assert!((w.raw - 1.0 / CLAMP_EPS).abs() < 1e-6);
        // Second evaluation is not degenerate.
        ledger.push(1.5, 1.8);
        assert!(!ledger.adaptive_weight().degenerate);
    }

    #[test]
    fn hand_case_g04_o02_w10() {
        // Window 1 so smoothing is the identity: histories position the
        // smoothed values, references come from earlier minima.
        let mut ledger = BranchLedger::<f64>::new(B, 1);
        ledger.push(1.0, 1.0);
        ledger.adaptive_weight();
        ledger.push(0.4, 0.6);
        let w = ledger.adaptive_weight();
        assert!((w.g - 0.4).abs() < 1e-15);
        assert!((w.o - 0.2).abs() < 1e-15);
        assert!((w.raw - 10.0).abs() < 1e-12);
    }

    #[test]
    fn overfitting_branch_is_silenced() {
        // Validation rising, training still falling.
        let mut ledger = BranchLedger::<f64>::new(B, 1);
        ledger.push(0.6, 0.5);
        ledger.adaptive_weight();
        ledger.push(0.3, 0.7);
        let w = ledger.adaptive_weight();
        assert!((w.g - (-0.2)).abs() < 1e-15);
        assert!((w.o - 0.5).abs() < 1e-15);
        assert!((w.raw - CLAMP_EPS / 0.25).abs() < 1e-18);
        assert!(w.raw < 1e-5);
    }

    #[test]
    fn best_references_are_monotone() {
        let mut ledger = BranchLedger::<f64>::new(B, 1);
        let losses = [1.0, 0.7, 0.9, 0.5, 0.8, 0.4];
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for &l in &losses {
            ledger.push(l, l + 0.05);
            ledger.adaptive_weight();
            let (bt, bv) = ledger.best_refs();
            let now = (bt.unwrap(), bv.unwrap());
            assert!(now.0 <= prev.0 && now.1 <= prev.1);
            prev = now;
        }
        assert_eq!(prev.0, 0.4);
    }

    #[test]
    fn normalize_examples() {
        let w = BlendWeights::normalize(&[
            (Branch::View(View::Mel), 10.0),
            (Branch::View(View::Gammatone), 0.0),
            (Branch::View(View::Cqt), 0.0),
            (Branch::View(View::Raw), 0.0),
            (Branch::Joint, 0.0),
        ])
        .unwrap();
        assert_eq!(w.get(Branch::View(View::Mel)), 1.0);
        assert_eq!(w.get(Branch::Joint), 0.0);
        assert_eq!(w.z, 10.0);

        let raw: Vec<(Branch, f64)> = Branch::order(&View::ALL.to_vec())
            .into_iter()
            .zip([1.0, 2.0, 3.0, 4.0, 10.0])
            .collect();
        let w = BlendWeights::normalize(&raw).unwrap();
        let got: Vec<f64> = w.iter().map(|(_, v)| v).collect();
        assert_eq!(got, vec![0.05, 0.10, 0.15, 0.20, 0.50]);
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_falls_back_to_uniform() {
        let raw: Vec<(Branch, f64)> =
            Branch::order(&View::ALL.to_vec()).into_iter().map(|b| (b, 0.0)).collect();
        let w = BlendWeights::normalize(&raw).unwrap();
        for (_, v) in w.iter() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn scaling_raw_weights_leaves_normalized_unchanged() {
        let branches = Branch::order(&View::ALL.to_vec());
        let raw: Vec<(Branch, f64)> =
            branches.iter().copied().zip([0.3, 1.7, 0.01, 5.0, 2.2]).collect();
        let scaled: Vec<(Branch, f64)> = raw.iter().map(|&(b, w)| (b, w * 37.5)).collect();
        let a = BlendWeights::normalize(&raw).unwrap();
        let b = BlendWeights::normalize(&scaled).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn blended_loss_reductions() {
        let branches = Branch::order(&View::ALL.to_vec());
        let losses: Vec<(Branch, f64)> =
            branches.iter().copied().zip([0.5, 1.0, 2.0, 3.0, 4.0]).collect();
        let only_mel = BlendWeights::fixed(&branches, Branch::View(View::Mel));
        assert_eq!(blended_loss(&losses, &only_mel), 0.5);

        let uniform = BlendWeights::uniform(&branches);
        let equal: Vec<(Branch, f64)> = branches.iter().map(|&b| (b, 1.3)).collect();
        assert!((blended_loss(&equal, &uniform) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn ledger_bytes_round_trip_and_resume() {
        let mut a = BranchLedger::<f64>::new(Branch::Joint, 3);
        for i in 0..7 {
            a.push(1.0 / (i + 1) as f64, 1.1 / (i + 1) as f64);
            a.adaptive_weight();
        }
        let bytes = a.to_bytes();
        let (mut b, used) = BranchLedger::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(a, b);
        // Identical future losses produce identical weights.
        a.push(0.11, 0.13);
        b.push(0.11, 0.13);
        let (wa, wb) = (a.adaptive_weight(), b.adaptive_weight());
        assert_eq!(wa.raw, wb.raw);
        assert_eq!(wa.g, wb.g);
    }
}
