//! Shared test utilities: the central finite-difference gradient oracle.
//!
//! The oracle only ever calls the forward pass; it never touches the
//! backward rules it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blendcrnn::nn::{Bound, ParamId, ParamKind, ParamStore};
use blendcrnn::tensor::{Tape, Tensor};

pub const FD_STEP: f64 = 1e-6;

/// Scalar loss produced by a forward pass over bound parameters.
pub type LossFn<'a> = &'a dyn Fn(&ParamStore<f64>, &mut Tape<f64>, &Bound<f64>) -> Tensor<f64>;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-7 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(1e-8)
}

fn loss_value(store: &ParamStore<f64>, run: LossFn) -> f64 {
    let mut tape = Tape::inference();
    let bound = store.bind(&mut tape);
    run(store, &mut tape, &bound).item()
}

/// Compare analytic gradients against central finite differences on
/// `n_checks` randomly chosen trainable parameter entries.
pub fn fd_check(
    store: &mut ParamStore<f64>,
    run: LossFn,
    n_checks: usize,
    tol: f64,
    seed: u64,
) {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = run(store, &mut tape, &bound);
    assert!(loss.is_scalar());
    let grads = tape.backward(&loss).expect("backward");

    let trainable: Vec<ParamId> = store
        .iter()
        .filter(|(_, e)| e.kind == ParamKind::Trainable)
        .map(|(id, _)| id)
        .collect();
    assert!(!trainable.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_checks {
        let pid = trainable[rng.random_range(0..trainable.len())];
        let j = rng.random_range(0..store.get(pid).numel());
        let analytic = grads.by_id(bound.node_of(pid).expect("bound")).data()[j];

        let original = store.get(pid).clone();
        let mut bump = |delta: f64| {
            let mut t = original.clone();
            t.data_mut()[j] += delta;
            store.set(pid, t);
            loss_value(store, run)
        };
        let plus = bump(FD_STEP);
        let minus = bump(-FD_STEP);
        store.set(pid, original);

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = rel_err(analytic, numeric);
        worst = worst.max(err);
        assert!(
            err < tol,
            "param {} [{}]: analytic {analytic} vs fd {numeric} (rel {err})",
            store.entry(pid).name,
            j
        );
    }
    assert!(worst.is_finite());
}

/// A deterministic random tensor with entries in `(-scale, scale)`.
pub fn rand_tensor(shape: Vec<usize>, scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}
