//! Training engine: learning-rate schedule, Adam, the blended training loop,
//! evaluation cadence, and model selection.
//!
//! Each step forwards every example of the minibatch on its own tape (in
//! parallel, reduced in a fixed order so results do not depend on thread
//! scheduling), computes the weighted sum of branch cross-entropies, and
//! takes one Adam step on the mean gradient. At every evaluation interval
//! the branch losses on a fixed training subset and on the validation set
//! are appended to the branch ledgers and the blend weights recomputed.
//! The parameter snapshot with the best validation accuracy is retained.

mod adam;
mod infer;

pub use adam::{adam_step, AdamState};
pub use infer::{
    argmax_lowest, branch_distributions, evaluate, infer_file, late_fusion, self_ensemble,
    EvalReport,
};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::blend::{AdaptiveWeight, BlendError, BlendWeights, BranchLedger};
use crate::data::{DataError, SampleFeatures};
use crate::dsp::train_offset;
use crate::net::{MultiViewNet, NetError, Scope, ViewInputs};
use crate::nn::{BnUpdate, FwdCtx, ParamId};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::view::{Branch, View};

const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("non-finite gradient for parameter {param} ({value})")]
    NonFiniteGrad { param: String, value: f64 },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("missing single-view checkpoint(s): {0}")]
    MissingCheckpoints(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Blend(#[from] BlendError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Training regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Adaptive gradient blending over all branches.
    Blend,
    /// Concatenation fusion: all weight on the joint branch, no adaptation.
    Concat,
    /// One subnet and its branch only.
    Single(View),
    /// Late fusion of independently trained single-view models (driven by
    /// the caller; not a training-loop mode).
    Late,
}

impl Mode {
    pub fn scope(self) -> Scope {
        match self {
            Mode::Single(v) => Scope::Single(v),
            _ => Scope::Full,
        }
    }

    pub fn name(self) -> String {
        match self {
            Mode::Blend => "blend".into(),
            Mode::Concat => "concat".into(),
            Mode::Single(v) => format!("single:{v}"),
            Mode::Late => "late".into(),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "blend" => Ok(Mode::Blend),
            "concat" => Ok(Mode::Concat),
            "late" => Ok(Mode::Late),
            other => match other.strip_prefix("single:") {
                Some(v) => Ok(Mode::Single(v.parse()?)),
                None => Err(format!("unknown mode: {other}")),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub init_lr: f64,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    /// Steps between evaluations; `None` evaluates at each epoch end.
    pub eval_every_steps: Option<usize>,
    /// Smoothing window of the branch ledgers, in evaluations.
    pub window: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            minibatch: 64,
            init_lr: 2e-4,
            warmup_lr: 2e-5,
            warmup_epochs: 10,
            decay_factor: 0.8,
            eval_every_steps: None,
            window: crate::blend::DEFAULT_WINDOW,
            seed: 0,
            mode: Mode::Blend,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |s: String| Err(TrainError::Config(s));
        if self.epochs == 0 || self.minibatch == 0 || self.window == 0 {
            return fail("epochs, minibatch and window must be positive".into());
        }
        if self.eval_every_steps == Some(0) {
            return fail("eval interval must be at least 1 step".into());
        }
        if !(self.init_lr > 0.0 && self.warmup_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return fail(format!("decay factor {} outside (0, 1]", self.decay_factor));
        }
        if self.mode == Mode::Late {
            return fail("late fusion is assembled from single-view runs, not trained directly".into());
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: the warm-up rate for the first
/// `warmup_epochs`, then the initial rate decayed once for each of the
/// `0.1E`, `0.2E`, `0.3E` thresholds strictly exceeded.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= cfg.warmup_epochs {
        return cfg.warmup_lr;
    }
    let e = cfg.epochs as f64;
    let decays = [0.1, 0.2, 0.3]
        .iter()
        .filter(|&&f| epoch as f64 > f * e)
        .count();
    cfg.init_lr * cfg.decay_factor.powi(decays as i32)
}

/// Prepared training inputs: gradient samples, the fixed loss-tracking
/// subset (indices into `train`), and the validation set.
pub struct TrainData<F: Scalar> {
    pub train: Vec<SampleFeatures<F>>,
    pub train_subset: Vec<usize>,
    pub validation: Vec<SampleFeatures<F>>,
}

impl<F: Scalar> TrainData<F> {
    /// Samples the fixed training subset (validation-set size) once.
    pub fn new(
        train: Vec<SampleFeatures<F>>,
        validation: Vec<SampleFeatures<F>>,
        seed: u64,
    ) -> Self {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b5e7);
        idx.shuffle(&mut rng);
        let mut train_subset: Vec<usize> =
            idx.into_iter().take(validation.len().min(train.len()).max(1)).collect();
        train_subset.sort_unstable();
        TrainData { train, train_subset, validation }
    }
}

/// Result of one training run. The network passed to [`train`] is left
/// holding the selected (best validation accuracy) parameters.
pub struct TrainOutcome<F: Scalar> {
    pub best_val_acc: f64,
    pub best_step: u64,
    pub best_epoch: usize,
    /// Blend weights in force when the best accuracy was recorded.
    pub ensemble_weights: BlendWeights<F>,
    /// Ledger state at selection, for checkpoint resume.
    pub ledgers: Vec<BranchLedger<F>>,
    pub val_report_at_best: EvalReport,
    pub metrics_csv: String,
    pub weights_csv: String,
    pub final_step: u64,
}

struct SampleResult<F: Scalar> {
    blended: F,
    grads: Vec<Option<Vec<F>>>,
    bn: Vec<BnUpdate<F>>,
}

struct Snapshot<F: Scalar> {
    params: Vec<Tensor<F>>,
    acc: f64,
    step: u64,
    epoch: usize,
    weights: BlendWeights<F>,
    ledgers: Vec<BranchLedger<F>>,
    report: EvalReport,
}

pub fn train<F: Scalar>(
    net: &mut MultiViewNet<F>,
    data: &TrainData<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(TrainError::Config("train and validation sets must be nonempty".into()));
    }
    let branches = match cfg.mode {
        Mode::Single(v) => vec![Branch::View(v)],
        _ => net.branches(),
    };
    let selection_branch = match cfg.mode {
        Mode::Single(v) => Branch::View(v),
        _ => Branch::Joint,
    };
    let mut weights = match cfg.mode {
        Mode::Blend => BlendWeights::uniform(&branches),
        Mode::Concat => BlendWeights::fixed(&branches, Branch::Joint),
        Mode::Single(v) => BlendWeights::fixed(&branches, Branch::View(v)),
        Mode::Late => unreachable!(),
    };
    let mut ledgers: Vec<BranchLedger<F>> =
        branches.iter().map(|&b| BranchLedger::new(b, cfg.window)).collect();

    let mut metrics_csv = metrics_header(&branches);
    let mut weights_csv = String::from(
        "step,epoch,branch,raw_w,normalized_w,G,O,smoothed_train_loss,smoothed_true_loss\n",
    );

    let mut adam = AdamState::new(&net.store);
    let mut best: Option<Snapshot<F>> = None;
    let mut step: u64 = 0;
    let scope = cfg.mode.scope();

    for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x0e9c, epoch as u64));
        order.shuffle(&mut epoch_rng);

        for batch in order.chunks(cfg.minibatch) {
            step += 1;
            let results: Vec<Result<SampleResult<F>>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &idx)| {
                    run_sample(net, &data.train[idx], cfg, &weights, scope, step, k as u64)
                })
                .collect();

            let mut grad_sum: Vec<Option<Vec<F>>> = vec![None; net.store.len()];
            let mut bn_acc: Vec<BnUpdate<F>> = Vec::new();
            let mut blended_sum = F::zero();
            let mut n = 0usize;
            for r in results {
                let r = r?;
                blended_sum = blended_sum + r.blended;
                accumulate(&mut grad_sum, r.grads);
                accumulate_bn(&mut bn_acc, r.bn);
                n += 1;
            }
            let blended = blended_sum / F::cast_usize(n);
            if !blended.is_finite() {
                return Err(TrainError::Divergence {
                    step,
                    detail: format!("blended minibatch loss is {blended}"),
                });
            }
            let inv = F::one() / F::cast_usize(n);
            for g in grad_sum.iter_mut().flatten() {
                for v in g.iter_mut() {
                    *v = *v * inv;
                }
            }
            adam_step(&mut net.store, &grad_sum, &mut adam, F::cast(lr))?;
            fold_bn(net, &bn_acc, n);

            if let Some(k) = cfg.eval_every_steps {
                if step % (k as u64) == 0 {
                    run_eval(
                        net, data, cfg, &branches, selection_branch, &mut weights,
                        &mut ledgers, &mut best, step, epoch, lr, &mut metrics_csv,
                        &mut weights_csv,
                    )?;
                }
            }
        }

        if cfg.eval_every_steps.is_none() {
            run_eval(
                net, data, cfg, &branches, selection_branch, &mut weights, &mut ledgers,
                &mut best, step, epoch, lr, &mut metrics_csv, &mut weights_csv,
            )?;
        }
    }

    if best.is_none() {
        // Step-based cadence that never fired inside the run.
        let lr = lr_at(cfg.epochs, cfg);
        run_eval(
            net, data, cfg, &branches, selection_branch, &mut weights, &mut ledgers,
            &mut best, step, cfg.epochs, lr, &mut metrics_csv, &mut weights_csv,
        )?;
    }
    let snapshot = best.expect("at least one evaluation ran");

    for (i, value) in snapshot.params.iter().enumerate() {
        net.store.set(ParamId(i), value.clone());
    }
    Ok(TrainOutcome {
        best_val_acc: snapshot.acc,
        best_step: snapshot.step,
        best_epoch: snapshot.epoch,
        ensemble_weights: snapshot.weights,
        ledgers: snapshot.ledgers,
        val_report_at_best: snapshot.report,
        metrics_csv,
        weights_csv,
        final_step: step,
    })
}

/// Forward/backward for one example on its own tape.
fn run_sample<F: Scalar>(
    net: &MultiViewNet<F>,
    sample: &SampleFeatures<F>,
    cfg: &TrainConfig,
    weights: &BlendWeights<F>,
    scope: Scope,
    step: u64,
    k: u64,
) -> Result<SampleResult<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, step, k));
    let views: Vec<View> = match scope {
        Scope::Full => net.views().to_vec(),
        Scope::Single(v) => vec![v],
    };
    let mut inputs = ViewInputs::new();
    for &v in &views {
        let m = sample.view(v);
        let seg = net.config.segment_len(v);
        let offset = train_offset(m.frames, seg, &mut rng).map_err(DataError::Dsp)?;
        inputs.insert(v, m.input_tensor(v, offset, seg));
    }

    let mut tape = Tape::new();
    let bound = net.store.bind(&mut tape);
    let mut bn: Vec<BnUpdate<F>> = Vec::new();
    let out = {
        let mut ctx = FwdCtx {
            tape: &mut tape,
            bound: &bound,
            store: &net.store,
            train: true,
            rng: &mut rng,
            bn_updates: &mut bn,
            trace: None,
        };
        let out = net.forward(&mut ctx, &inputs, scope)?;

        // Blended per-sample loss: only branches with nonzero weight
        // contribute (identical gradient, less backward work).
        let mut blended: Option<Tensor<F>> = None;
        for (branch, logits) in &out.logits {
            let w = weights.get(*branch);
            if w == F::zero() {
                continue;
            }
            let ce = cross_entropy_on_tape(&mut ctx, logits, sample.label)?;
            let term = ctx.tape.scale(&ce, w);
            blended = Some(match blended {
                None => term,
                Some(acc) => ctx.tape.add(&acc, &term).map_err(NetError::from)?,
            });
        }
        blended.ok_or_else(|| TrainError::Config("no branch has nonzero weight".into()))?
    };

    let grads = tape.backward(&out).map_err(NetError::from)?;
    let grad_vec = (0..net.store.len())
        .map(|i| bound.node_of(ParamId(i)).and_then(|n| grads.raw_by_id(n).map(|g| g.to_vec())))
        .collect();
    Ok(SampleResult { blended: out.item(), grads: grad_vec, bn })
}

/// One-hot cross-entropy of a logits vector on the tape.
fn cross_entropy_on_tape<F: Scalar>(
    ctx: &mut FwdCtx<'_, F>,
    logits: &Tensor<F>,
    label: usize,
) -> Result<Tensor<F>> {
    let n = logits.numel();
    let mut one_hot = vec![F::zero(); n];
    one_hot[label] = F::one();
    let y = Tensor::new(vec![n], one_hot);
    let ls = ctx.tape.log_softmax(logits);
    let picked = ctx.tape.mul(&ls, &y).map_err(NetError::from)?;
    let total = ctx.tape.sum_all(&picked);
    Ok(ctx.tape.scale(&total, -F::one()))
}

fn accumulate<F: Scalar>(acc: &mut [Option<Vec<F>>], grads: Vec<Option<Vec<F>>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match a {
            Some(a) => {
                for (x, y) in a.iter_mut().zip(g) {
                    *x = *x + y;
                }
            }
            empty => *empty = Some(g),
        }
    }
}

fn accumulate_bn<F: Scalar>(acc: &mut Vec<BnUpdate<F>>, updates: Vec<BnUpdate<F>>) {
    if acc.is_empty() {
        *acc = updates;
        return;
    }
    debug_assert_eq!(acc.len(), updates.len());
    for (a, u) in acc.iter_mut().zip(updates) {
        debug_assert_eq!(a.mean_id, u.mean_id);
        for (x, y) in a.stats.mean.iter_mut().zip(u.stats.mean) {
            *x = *x + y;
        }
        for (x, y) in a.stats.var.iter_mut().zip(u.stats.var) {
            *x = *x + y;
        }
    }
}

/// Fold batch-mean statistics into the running estimates.
fn fold_bn<F: Scalar>(net: &mut MultiViewNet<F>, acc: &[BnUpdate<F>], n: usize) {
    let momentum = F::cast(BN_MOMENTUM);
    let one_minus = F::one() - momentum;
    let inv = F::one() / F::cast_usize(n);
    for u in acc {
        for (id, batch) in [(u.mean_id, &u.stats.mean), (u.var_id, &u.stats.var)] {
            let mut t = net.store.get(id).clone();
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = momentum * *r + one_minus * (b * inv);
            }
            net.store.set(id, t);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_eval<F: Scalar>(
    net: &MultiViewNet<F>,
    data: &TrainData<F>,
    cfg: &TrainConfig,
    branches: &[Branch],
    selection_branch: Branch,
    weights: &mut BlendWeights<F>,
    ledgers: &mut [BranchLedger<F>],
    best: &mut Option<Snapshot<F>>,
    step: u64,
    epoch: usize,
    lr: f64,
    metrics_csv: &mut String,
    weights_csv: &mut String,
) -> Result<()> {
    let scope = cfg.mode.scope();
    let subset: Vec<&SampleFeatures<F>> =
        data.train_subset.iter().map(|&i| &data.train[i]).collect();
    let val: Vec<&SampleFeatures<F>> = data.validation.iter().collect();
    let subset_report = evaluate(net, &subset, weights, scope)?;
    let val_report = evaluate(net, &val, weights, scope)?;

    // Metrics row reflects the weights the optimizer was just using.
    let blended: f64 = branches
        .iter()
        .map(|&b| weights.get(b).as_f64() * subset_report.loss_of(b))
        .sum();
    let mut row = format!("{step},{epoch},{lr},{blended}");
    for &b in branches {
        write!(row, ",{}", subset_report.loss_of(b)).unwrap();
    }
    for &b in branches {
        write!(row, ",{}", val_report.loss_of(b)).unwrap();
    }
    for &b in branches {
        write!(row, ",{}", val_report.acc_of(b)).unwrap();
    }
    write!(row, ",{}\n", val_report.ensemble_acc).unwrap();
    metrics_csv.push_str(&row);

    // Model selection under the weights in force.
    let sel_acc = val_report.acc_of(selection_branch);
    let better = best.as_ref().map(|b| sel_acc > b.acc).unwrap_or(true);
    if better {
        *best = Some(Snapshot {
            params: net.store.iter().map(|(_, e)| e.value.clone()).collect(),
            acc: sel_acc,
            step,
            epoch,
            weights: weights.clone(),
            ledgers: ledgers.to_vec(),
            report: val_report.clone(),
        });
    }

    // Ledger update and weight adaptation (blend mode only).
    if cfg.mode == Mode::Blend {
        let mut raw: Vec<(Branch, F)> = Vec::with_capacity(branches.len());
        let mut evals: Vec<AdaptiveWeight<F>> = Vec::with_capacity(branches.len());
        for (ledger, &b) in ledgers.iter_mut().zip(branches) {
            ledger.push(
                F::cast(subset_report.loss_of(b)),
                F::cast(val_report.loss_of(b)),
            );
            let aw = ledger.adaptive_weight();
            raw.push((b, aw.raw));
            evals.push(aw);
        }
        let any_degenerate = evals.iter().any(|e| e.degenerate);
        let new_weights = if any_degenerate {
            BlendWeights::uniform(branches)
        } else {
            BlendWeights::normalize(&raw)?
        };
        for (aw, &b) in evals.iter().zip(branches) {
            weights_csv.push_str(&format!(
                "{step},{epoch},{b},{},{},{},{},{},{}\n",
                aw.raw.as_f64(),
                new_weights.get(b).as_f64(),
                aw.g.as_f64(),
                aw.o.as_f64(),
                aw.smoothed_train.as_f64(),
                aw.smoothed_val.as_f64(),
            ));
        }
        *weights = new_weights;
    }
    Ok(())
}

fn metrics_header(branches: &[Branch]) -> String {
    let mut h = String::from("step,epoch,lr,blended_loss");
    for b in branches {
        write!(h, ",train_loss_{b}").unwrap();
    }
    for b in branches {
        write!(h, ",val_loss_{b}").unwrap();
    }
    for b in branches {
        write!(h, ",val_acc_{b}").unwrap();
    }
    h.push_str(",ensemble_val_acc\n");
    h
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut x = a ^ b.rotate_left(21) ^ c.rotate_left(47) ^ 0x2545_f491_4f6c_dd1d;
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x.wrapping_mul(0xc4ce_b9fe_1a85_ec53)
}
