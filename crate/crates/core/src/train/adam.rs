//! Adam optimizer with bias correction.

use crate::nn::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::TrainError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates per trainable parameter.
pub struct AdamState<F: Scalar> {
    moments: Vec<Option<(Vec<F>, Vec<F>)>>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let moments = store
            .iter()
            .map(|(_, e)| match e.kind {
                ParamKind::Trainable => {
                    Some((vec![F::zero(); e.value.numel()], vec![F::zero(); e.value.numel()]))
                }
                ParamKind::Buffer => None,
            })
            .collect();
        AdamState { moments, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update. `grads` is indexed by parameter id; `None` means the
/// parameter received no gradient this step (treated as zero).
pub fn adam_step<F: Scalar>(
    store: &mut ParamStore<F>,
    grads: &[Option<Vec<F>>],
    state: &mut AdamState<F>,
    lr: F,
) -> Result<(), TrainError> {
    state.t += 1;
    let b1 = F::cast(BETA1);
    let b2 = F::cast(BETA2);
    let eps = F::cast(EPS);
    let corr1 = F::one() - F::cast(BETA1.powi(state.t as i32));
    let corr2 = F::one() - F::cast(BETA2.powi(state.t as i32));

    let ids: Vec<usize> = (0..store.len()).collect();
    for i in ids {
        let Some((m, v)) = state.moments[i].as_mut() else { continue };
        let entry = store.entry_mut(crate::nn::ParamId(i));
        let zero = F::zero();
        let grad = grads[i].as_deref();
        if let Some(g) = grad {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGrad {
                    param: entry.name.clone(),
                    value: bad.as_f64(),
                });
            }
        }
        let values = data_mut(&mut entry.value);
        for j in 0..values.len() {
            let g = grad.map(|g| g[j]).unwrap_or(zero);
            m[j] = b1 * m[j] + (F::one() - b1) * g;
            v[j] = b2 * v[j] + (F::one() - b2) * g * g;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            values[j] = values[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn data_mut<F: Scalar>(t: &mut Tensor<F>) -> &mut [F] {
    t.data_mut()
}
