//! End-to-end checks of the training loop on small in-memory feature sets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blendcrnn::data::{FeatureMatrix, SampleFeatures};
use blendcrnn::net::{MultiViewNet, NetworkConfig, Scale};
use blendcrnn::train::{train, Mode, TrainConfig, TrainData};
use blendcrnn::view::{Branch, View};

/// Tiny hand-made dataset: class-dependent constant offsets plus noise, with
/// geometry matching the reduced preset.
fn toy_samples(n: usize, n_classes: usize, seed: u64) -> Vec<SampleFeatures<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % n_classes;
            let mut views = BTreeMap::new();
            for v in View::ALL {
                let (frames, bands) = if v == View::Raw { (6000, 1) } else { (24, 16) };
                let bias = label as f64 * 0.7 - 1.0;
                let data: Vec<f64> = (0..frames * bands)
                    .map(|_| bias + rng.random_range(-0.25..0.25))
                    .collect();
                views.insert(v, FeatureMatrix { frames, bands, data });
            }
            SampleFeatures { label, views, duration_sec: 1.2 }
        })
        .collect()
}

fn toy_net(seed: u64) -> MultiViewNet<f64> {
    let mut cfg = NetworkConfig::new(3, &View::ALL, Scale::Reduced, 8000).unwrap();
    cfg.init_seed = seed;
    MultiViewNet::build(cfg).unwrap()
}

fn quick_cfg(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        minibatch: 6,
        init_lr: 1e-3,
        warmup_lr: 1e-3,
        warmup_epochs: 0,
        decay_factor: 0.8,
        eval_every_steps: None,
        window: 3,
        seed,
        mode,
    }
}

#[test]
fn blend_training_runs_and_is_deterministic() {
    let data = TrainData::new(toy_samples(12, 3, 1), toy_samples(6, 3, 2), 7);
    let mut net_a = toy_net(3);
    let out_a = train(&mut net_a, &data, &quick_cfg(Mode::Blend, 11)).unwrap();
    let mut net_b = toy_net(3);
    let out_b = train(&mut net_b, &data, &quick_cfg(Mode::Blend, 11)).unwrap();

    assert_eq!(out_a.metrics_csv, out_b.metrics_csv);
    assert_eq!(out_a.weights_csv, out_b.weights_csv);
    for ((_, a), (_, b)) in net_a.store.iter().zip(net_b.store.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert!(out_a.metrics_csv.lines().count() >= 3);
    // First adaptation is uniform, so the weights CSV carries 5 rows per eval.
    assert!(out_a.weights_csv.lines().count() >= 1 + 5 * 2);
    assert!(out_a.best_val_acc >= 0.0 && out_a.best_val_acc <= 1.0);
}

#[test]
fn concat_mode_never_touches_view_heads() {
    let data = TrainData::new(toy_samples(8, 3, 4), toy_samples(4, 3, 5), 1);
    let mut net = toy_net(9);
    let before: Vec<(String, blendcrnn::Tensor)> = net
        .store
        .iter()
        .map(|(_, e)| (e.name.clone(), e.value.clone()))
        .collect();
    train(&mut net, &data, &quick_cfg(Mode::Concat, 2)).unwrap();

    let mut conv_changed = false;
    for ((name, old), (_, new)) in before.iter().zip(net.store.iter()) {
        let is_view_head = View::ALL.iter().any(|v| name.starts_with(&format!("{v}/head/")));
        if is_view_head {
            assert_eq!(old, &new.value, "single-view head parameter {name} moved");
        }
        if name.contains("/conv") && old != &new.value {
            conv_changed = true;
        }
    }
    assert!(conv_changed, "subnet weights should move through the joint branch");
}

#[test]
fn single_view_mode_trains_only_that_subnet() {
    let data = TrainData::new(toy_samples(8, 3, 6), toy_samples(4, 3, 7), 1);
    let mut net = toy_net(13);
    let before: Vec<(String, blendcrnn::Tensor)> = net
        .store
        .iter()
        .map(|(_, e)| (e.name.clone(), e.value.clone()))
        .collect();
    train(&mut net, &data, &quick_cfg(Mode::Single(View::Mel), 3)).unwrap();

    let mut mel_changed = false;
    for ((name, old), (_, new)) in before.iter().zip(net.store.iter()) {
        if name.starts_with("mel/") {
            if old != &new.value {
                mel_changed = true;
            }
        } else {
            assert_eq!(old, &new.value, "non-mel parameter {name} moved");
        }
    }
    assert!(mel_changed);
}

#[test]
fn selection_keeps_the_best_validation_accuracy() {
    let data = TrainData::new(toy_samples(12, 3, 8), toy_samples(6, 3, 9), 2);
    let mut net = toy_net(21);
    let cfg = TrainConfig { epochs: 4, ..quick_cfg(Mode::Concat, 5) };
    let out = train(&mut net, &data, &cfg).unwrap();

    // The persisted accuracy dominates every interim value in the CSV.
    let header: Vec<&str> = out.metrics_csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "val_acc_joint").unwrap();
    for line in out.metrics_csv.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!(out.best_val_acc >= v - 1e-12);
    }
    assert_eq!(
        out.ensemble_weights.get(Branch::Joint),
        1.0,
        "concat mode pins all weight on the joint branch"
    );
}
