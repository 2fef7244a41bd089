mod common;

use std::path::Path;

use common::*;
use gecco::data::{load_idx, Dataset};
use gecco::model::{GeccoModel, Mode, ModelConfig};
use gecco::tensor::{Real, Tensor2D};
use gecco::train::{train_loop, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mnist_head(n: usize) -> Dataset {
    load_idx(Path::new(MNIST_TRAIN_IMAGES), Path::new(MNIST_TRAIN_LABELS))
        .unwrap()
        .take(n)
        .unwrap()
}

/// Two classes split by the sign of a fixed direction in pixel space.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    while images.len() < n {
        let px: Vec<f64> = (0..36).map(|_| rng.gen_range(0.0..1.0)).collect();
        let score: f64 = px.iter().zip(&w).map(|(p, w)| (p - 0.5) * w).sum();
        if score.abs() < 0.2 {
            continue;
        }
        images.push(Tensor2D::from_fn(6, 6, |r, c| px[r * 6 + c] as Real));
        labels.push((score > 0.0) as usize);
    }
    Dataset::new(images, labels, vec!["neg".into(), "pos".into()]).unwrap()
}

#[test]
fn loss_decreases_on_separable_data() {
    let ds = separable(256, 3);
    for seed in 0..3 {
        let mut cfg = ModelConfig::new(6, 6, 16, 2);
        cfg.batch_size = 32;
        let mut model = GeccoModel::new(cfg, seed).unwrap();
        let r = train_loop(
            &mut model,
            &ds,
            None,
            &TrainOptions {
                epochs: 5,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let first = r.epochs[0].loss;
        let last = r.epochs[4].loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert_eq!(model.mode(), Mode::Eval);
    }
}

#[test]
fn overfits_64_samples_without_nan() {
    let ds = mnist_head(64);
    let mut model = GeccoModel::new(ModelConfig::mnist(), 0).unwrap();
    let mut reached = None;
    let r = gecco::train::train_loop_with(
        &mut model,
        &ds,
        None,
        &TrainOptions {
            epochs: 100,
            seed: 0,
            ..Default::default()
        },
        |s| {
            if reached.is_none() && s.train_accuracy >= 0.98 {
                reached = Some(s.epoch);
            }
        },
    )
    .unwrap();
    assert!(r.epochs.iter().all(|e| e.loss.is_finite()));
    for (_, t) in model.parameters() {
        assert!(t.data().iter().all(|v| v.is_finite()));
    }
    let bn = model.bn.as_ref().unwrap();
    assert!(bn.running_var.data().iter().all(|&v| v.is_finite() && v > 0.0));
    assert!(reached.is_some_and(|e| e <= 50), "reached 0.98 at {reached:?}");
}

#[test]
fn training_is_reproducible() {
    let ds = mnist_head(200);
    let mut cfg = ModelConfig::mnist();
    cfg.batch_size = 32;
    let run = || {
        let mut m = GeccoModel::new(cfg.clone(), 4).unwrap();
        let r = train_loop(
            &mut m,
            &ds,
            Some(&ds),
            &TrainOptions {
                epochs: 2,
                seed: 8,
                ..Default::default()
            },
        )
        .unwrap();
        (
            m,
            r.epochs.iter().map(|e| (e.loss, e.train_accuracy)).collect::<Vec<_>>(),
        )
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let mut other = GeccoModel::new(cfg.clone(), 4).unwrap();
    train_loop(
        &mut other,
        &ds,
        None,
        &TrainOptions {
            epochs: 2,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(a.w1, other.w1);
}

#[test]
fn running_statistics_track_training_batches() {
    let ds = mnist_head(128);
    let mut cfg = ModelConfig::mnist();
    cfg.batch_size = 32;
    let mut model = GeccoModel::new(cfg, 1).unwrap();
    let before = model.bn.clone().unwrap();
    train_loop(
        &mut model,
        &ds,
        None,
        &TrainOptions {
            epochs: 1,
            seed: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let after = model.bn.clone().unwrap();
    assert_ne!(before.running_mean, after.running_mean);
    assert_ne!(before.running_var, after.running_var);
}
