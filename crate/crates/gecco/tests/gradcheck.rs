//! Analytic gradients against central finite differences.

mod common;

use common::*;
#[cfg(feature = "f64")]
use gecco::model::AdjacencyMode;
use gecco::model::{GeccoModel, Mode, ModelConfig};
use gecco::train::backward;

fn check(cfg: ModelConfig, seeds: std::ops::Range<u64>, mode: Mode) {
    let (_, tol) = gradcheck_step_and_tolerance();
    for seed in seeds {
        let model = GeccoModel::new(cfg.clone(), seed).unwrap();
        let x = gradcheck_input(cfg.batch_size, cfg.input_len(), seed + 100);
        let labels = random_labels(cfg.batch_size, cfg.num_classes, seed);
        for (name, err) in gradcheck(&model, &x, &labels, mode) {
            assert!(err <= tol, "seed {seed} {name}: relative error {err:.3e} > {tol:e}");
        }
    }
}

#[test]
fn canonical_train_mode() {
    check(gradcheck_config(), 0..5, Mode::Train);
}

#[test]
fn without_attention() {
    let mut cfg = gradcheck_config();
    cfg.use_attention = false;
    check(cfg, 0..5, Mode::Train);
}

#[test]
fn attention_without_graph() {
    let mut cfg = gradcheck_config();
    cfg.use_gcn = false;
    check(cfg, 0..5, Mode::Train);
}

// Stacked sigmoid layers and unnormalized aggregation push single-precision
// differences below their rounding floor, so these run at double precision.
#[cfg(feature = "f64")]
#[test]
fn two_graph_layers_more_classes() {
    let mut cfg = gradcheck_config();
    cfg.gcn_layers = 2;
    cfg.num_classes = 3;
    cfg.batch_size = 4;
    check(cfg, 0..3, Mode::Train);
}

#[cfg(feature = "f64")]
#[test]
fn all_ones_adjacency_with_self_weight() {
    let mut cfg = gradcheck_config();
    cfg.adjacency_mode = AdjacencyMode::AllOnes;
    check(cfg, 0..3, Mode::Train);
}

#[test]
fn eval_mode_batch_norm() {
    let cfg = gradcheck_config();
    check(cfg, 0..3, Mode::Eval);
}

#[test]
fn dropout_mask_is_differentiated() {
    // with a fixed mask the network is a deterministic function of the weights
    let mut cfg = gradcheck_config();
    cfg.dropout_rate = 0.3;
    cfg.use_gcn = false;
    let mut model = GeccoModel::new(cfg.clone(), 3).unwrap();
    model.set_mode(Mode::Train);
    let x = gradcheck_input(3, 16, 4);
    let labels = random_labels(3, 2, 4);
    let trace = model.forward(&x, Some(11)).unwrap();
    let grads = backward(&model, &trace, &labels).unwrap();
    let mask = trace.dropout_mask.clone().unwrap();
    assert!(mask.data().contains(&0.0));
    // dropped units receive no gradient on their W1 column
    for c in 0..cfg.d_out {
        if (0..3).all(|b| mask.get(b, c) == 0.0) {
            assert!(grads
                .w1
                .data()
                .iter()
                .skip(c)
                .step_by(cfg.d_out)
                .take(16)
                .all(|&g| g == 0.0));
        }
    }
}

#[test]
fn attention_contributes_to_graph_gradients() {
    let cfg = gradcheck_config();
    let mut no_att = cfg.clone();
    no_att.use_attention = false;
    let mut a = GeccoModel::new(cfg, 1).unwrap();
    let mut b = GeccoModel::new(no_att, 1).unwrap();
    a.set_mode(Mode::Train);
    b.set_mode(Mode::Train);
    let x = gradcheck_input(3, 16, 9);
    let labels = random_labels(3, 2, 9);
    let ga = backward(&a, &a.forward(&x, None).unwrap(), &labels).unwrap();
    let gb = backward(&b, &b.forward(&x, None).unwrap(), &labels).unwrap();
    assert_eq!(a.gcn, b.gcn);
    assert_ne!(ga.gcn[0].neighbor, gb.gcn[0].neighbor);
}
