//! Segment-wise inference, the self-ensemble, late fusion, and evaluation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::blend::{branch_loss, BlendWeights};
use crate::data::{extract_file, FeaturePlan, SampleFeatures};
use crate::dsp::infer_offsets;
use crate::net::{MultiViewNet, Scope, ViewInputs};
use crate::nn::{BnUpdate, FwdCtx};
use crate::scalar::Scalar;
use crate::tensor::{softmax_row, Tape};
use crate::view::{Branch, View};

use super::TrainError;

/// Lowest index wins ties.
pub fn argmax_lowest<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-branch class distributions for one example: `S` evenly spaced
/// segments per view, forwarded and averaged.
pub fn branch_distributions<F: Scalar>(
    net: &MultiViewNet<F>,
    sample: &SampleFeatures<F>,
    scope: Scope,
) -> Result<Vec<(Branch, Vec<F>)>, TrainError> {
    let s = sample.n_infer_segments();
    let views: Vec<View> = match scope {
        Scope::Full => net.views().to_vec(),
        Scope::Single(v) => vec![v],
    };

    // Per-view offset lists, one entry per segment.
    let mut offsets = Vec::with_capacity(views.len());
    for &v in &views {
        let m = sample.view(v);
        offsets.push(infer_offsets(m.frames, net.config.segment_len(v), s).map_err(
            crate::data::DataError::Dsp,
        )?);
    }

    let mut dummy = Tape::inference();
    let bound = net.store.bind(&mut dummy);
    let mut sums: Vec<(Branch, Vec<F>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seg in 0..s {
        let mut inputs = ViewInputs::new();
        for (vi, &v) in views.iter().enumerate() {
            let m = sample.view(v);
            inputs.insert(v, m.input_tensor(v, offsets[vi][seg], net.config.segment_len(v)));
        }
        let mut tape = Tape::inference();
        let mut bn: Vec<BnUpdate<F>> = Vec::new();
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &net.store,
            train: false,
            rng: &mut rng,
            bn_updates: &mut bn,
            trace: None,
        };
        let out = net.forward(&mut ctx, &inputs, scope)?;
        for (i, (branch, logits)) in out.logits.iter().enumerate() {
            let probs = softmax_row(logits.data());
            if seg == 0 {
                sums.push((*branch, probs));
            } else {
                debug_assert_eq!(sums[i].0, *branch);
                for (a, p) in sums[i].1.iter_mut().zip(probs) {
                    *a = *a + p;
                }
            }
        }
    }
    let inv = F::one() / F::cast_usize(s);
    for (_, p) in &mut sums {
        for v in p.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(sums)
}

/// Full inference pipeline for a single audio file: extract the active
/// views, segment, forward, and average. Returns per-branch distributions.
pub fn infer_file<F: Scalar>(
    net: &MultiViewNet<F>,
    audio: &Path,
) -> Result<Vec<(Branch, Vec<F>)>, TrainError> {
    let cfg = &net.config;
    let plan = FeaturePlan::new(&cfg.views, |v| cfg.spectro_config(v));
    let sample = extract_file::<F>(audio, &plan)?;
    branch_distributions(net, &sample, Scope::Full)
}

/// Weighted self-ensemble over branch distributions:
/// `P(c) = (1/K) sum_k w_k P_k(c)`, label by argmax (lowest index on ties).
pub fn self_ensemble<F: Scalar>(
    dists: &[(Branch, Vec<F>)],
    weights: &BlendWeights<F>,
) -> (Vec<F>, usize) {
    assert!(!dists.is_empty());
    let n_classes = dists[0].1.len();
    let inv_k = F::one() / F::cast_usize(dists.len());
    let mut combined = vec![F::zero(); n_classes];
    for (branch, p) in dists {
        let w = weights.get(*branch);
        for (c, &v) in p.iter().enumerate() {
            combined[c] = combined[c] + inv_k * w * v;
        }
    }
    let label = argmax_lowest(&combined);
    (combined, label)
}

/// Unweighted mean of per-model distributions.
pub fn late_fusion<F: Scalar>(dists: &[Vec<F>]) -> Vec<F> {
    assert!(!dists.is_empty());
    let inv = F::one() / F::cast_usize(dists.len());
    let n = dists[0].len();
    let mut out = vec![F::zero(); n];
    for d in dists {
        for (o, &v) in out.iter_mut().zip(d) {
            *o = *o + inv * v;
        }
    }
    out
}

/// File-level evaluation over a labeled set.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub branches: Vec<Branch>,
    pub branch_loss: Vec<f64>,
    pub branch_acc: Vec<f64>,
    pub ensemble_acc: f64,
    /// Ensemble confusion counts, row-major `true x predicted`.
    pub confusion: Vec<usize>,
    pub n_classes: usize,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn acc_of(&self, branch: Branch) -> f64 {
        self.branches
            .iter()
            .position(|&b| b == branch)
            .map(|i| self.branch_acc[i])
            .unwrap_or(f64::NAN)
    }

    pub fn loss_of(&self, branch: Branch) -> f64 {
        self.branches
            .iter()
            .position(|&b| b == branch)
            .map(|i| self.branch_loss[i])
            .unwrap_or(f64::NAN)
    }
}

/// Evaluate per-branch losses/accuracies and the ensemble accuracy over a
/// set of examples. Losses are cross-entropies of the segment-averaged
/// distributions.
pub fn evaluate<F: Scalar>(
    net: &MultiViewNet<F>,
    samples: &[&SampleFeatures<F>],
    weights: &BlendWeights<F>,
    scope: Scope,
) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyEval);
    }
    let n_classes = net.config.n_classes;
    let per_sample: Vec<(Vec<(Branch, Vec<F>)>, usize)> = samples
        .par_iter()
        .map(|s| branch_distributions(net, s, scope).map(|d| (d, s.label)))
        .collect::<Result<_, _>>()?;

    let branches: Vec<Branch> = per_sample[0].0.iter().map(|&(b, _)| b).collect();
    let mut probs: Vec<Vec<F>> = vec![Vec::new(); branches.len()];
    let mut correct = vec![0usize; branches.len()];
    let mut ens_correct = 0usize;
    let mut confusion = vec![0usize; n_classes * n_classes];
    let mut labels = Vec::with_capacity(per_sample.len());

    for (dists, label) in &per_sample {
        labels.push(*label);
        for (i, (_, p)) in dists.iter().enumerate() {
            probs[i].extend(p.iter().copied());
            if argmax_lowest(p) == *label {
                correct[i] += 1;
            }
        }
        let (_, pred) = self_ensemble(dists, weights);
        if pred == *label {
            ens_correct += 1;
        }
        confusion[label * n_classes + pred] += 1;
    }

    let n = per_sample.len() as f64;
    let branch_loss = probs
        .iter()
        .map(|p| branch_loss(p, &labels, n_classes).map(|l| l.as_f64()))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(EvalReport {
        branches,
        branch_loss,
        branch_acc: correct.iter().map(|&c| c as f64 / n).collect(),
        ensemble_acc: ens_correct as f64 / n,
        confusion,
        n_classes,
        n_samples: per_sample.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::View;

    fn branches5() -> Vec<Branch> {
        Branch::order(&View::ALL.to_vec())
    }

    #[test]
    fn ensemble_equal_distributions_keep_argmax() {
        let p = vec![0.1, 0.6, 0.3];
        let dists: Vec<(Branch, Vec<f64>)> =
            branches5().into_iter().map(|b| (b, p.clone())).collect();
        let w = BlendWeights::uniform(&branches5());
        let (combined, label) = self_ensemble(&dists, &w);
        assert_eq!(label, 1);
        // Combined is proportional to p.
        let k = combined[0] / p[0];
        for (c, q) in combined.iter().zip(&p) {
            assert!((c - k * q).abs() < 1e-15);
        }
    }

    #[test]
    fn ensemble_single_weight_follows_that_branch() {
        let mut dists: Vec<(Branch, Vec<f64>)> =
            branches5().into_iter().map(|b| (b, vec![0.9, 0.1])).collect();
        dists[0].1 = vec![0.2, 0.8];
        let w = BlendWeights::fixed(&branches5(), Branch::View(View::Mel));
        let (_, label) = self_ensemble(&dists, &w);
        assert_eq!(label, 1);
    }

    #[test]
    fn ensemble_uniform_plurality_vote() {
        // Three one-hot votes for class 0, two for class 1.
        let votes = [0, 1, 0, 1, 0];
        let dists: Vec<(Branch, Vec<f64>)> = branches5()
            .into_iter()
            .zip(votes)
            .map(|(b, c)| {
                let mut p = vec![0.0; 3];
                p[c] = 1.0;
                (b, p)
            })
            .collect();
        let w = BlendWeights::uniform(&branches5());
        let (_, label) = self_ensemble(&dists, &w);
        assert_eq!(label, 0);
    }

    #[test]
    fn ensemble_tie_breaks_to_lowest_class() {
        let dists = vec![(Branch::Joint, vec![0.5, 0.5])];
        let w = BlendWeights::uniform(&[Branch::Joint]);
        let (_, label) = self_ensemble(&dists, &w);
        assert_eq!(label, 0);
    }

    #[test]
    fn late_fusion_examples() {
        // Four identical distributions fuse to themselves.
        let p: Vec<f64> = vec![0.25, 0.5, 0.25];
        let fused = late_fusion(&[p.clone(), p.clone(), p.clone(), p.clone()]);
        for (a, b) in fused.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15);
        }
        // Two strong votes for class 0 beat two weak votes for class 1.
        let fused = late_fusion(&[
            vec![0.9, 0.1],
            vec![0.9, 0.1],
            vec![0.45, 0.55],
            vec![0.4, 0.6],
        ]);
        assert_eq!(argmax_lowest(&fused), 0);
    }
}
