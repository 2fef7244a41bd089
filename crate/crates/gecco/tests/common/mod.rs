#![allow(dead_code, clippy::unnecessary_cast)]

use gecco::model::{GeccoModel, Mode, ModelConfig};
use gecco::tensor::{Real, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MNIST_TRAIN_IMAGES: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/data/mnist-subset-train-images-idx3-ubyte"
);
pub const MNIST_TRAIN_LABELS: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/data/mnist-subset-train-labels-idx1-ubyte"
);
pub const MNIST_TEST_IMAGES: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/data/mnist-subset-test-images-idx3-ubyte"
);
pub const MNIST_TEST_LABELS: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/data/mnist-subset-test-labels-idx1-ubyte"
);

pub fn random_input(b: usize, p: usize, seed: u64) -> Tensor2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor2D::from_fn(b, p, |_, _| rng.gen_range(0.0..1.0))
}

pub fn random_labels(b: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..b).map(|_| rng.gen_range(0..classes)).collect()
}

/// Mean cross-entropy from logits, evaluated in f64 via log-sum-exp.
pub fn loss_from_logits(logits: &Tensor2D, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(r).iter().map(|&v| v as f64).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[l];
    }
    total / labels.len() as f64
}

/// Central finite differences of the loss for every parameter entry. In
/// train mode the batch statistics are used and running statistics stay
/// frozen, since `forward` never updates them.
pub fn finite_difference(model: &GeccoModel, x: &Tensor2D, labels: &[usize], h: f64, mode: Mode) -> Vec<Tensor2D> {
    let mut probe = model.clone();
    probe.set_mode(mode);
    let shapes: Vec<(usize, usize)> = probe.parameters().iter().map(|(_, t)| t.shape()).collect();
    let mut out = Vec::new();
    for (pi, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Tensor2D::zeros(r, c);
        for i in 0..r * c {
            let orig = probe.parameters_mut()[pi].data()[i];
            let up = orig + h as Real;
            let down = orig - h as Real;
            probe.parameters_mut()[pi].data_mut()[i] = up;
            let plus = loss_from_logits(&probe.forward(x, None).unwrap().logits, labels);
            probe.parameters_mut()[pi].data_mut()[i] = down;
            let minus = loss_from_logits(&probe.forward(x, None).unwrap().logits, labels);
            probe.parameters_mut()[pi].data_mut()[i] = orig;
            // divide by the step actually taken after rounding
            g.data_mut()[i] = ((plus - minus) / (up as f64 - down as f64)) as Real;
        }
        out.push(g);
    }
    out
}

/// The small configuration used by the gradient checks.
pub fn gradcheck_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 4, 6, 2);
    cfg.batch_size = 3;
    cfg.dropout_rate = 0.0;
    cfg
}

/// Largest entry-wise deviation, relative to the largest gradient entry of
/// the tensor.
pub fn tensor_relative_error(analytic: &Tensor2D, numeric: &Tensor2D) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()) as f64;
    let worst = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a as f64 - n as f64).abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Step and tolerance for the finite-difference check at the compiled precision.
pub fn gradcheck_step_and_tolerance() -> (f64, f64) {
    if std::mem::size_of::<Real>() == 8 {
        (1e-6, 1e-4)
    } else {
        (1e-3, 1e-2)
    }
}

/// Inputs for the gradient check: uniform in [-3, 3], wide enough that the
/// graph features keep a healthy batch variance at B = 3.
pub fn gradcheck_input(b: usize, p: usize, seed: u64) -> Tensor2D {
    random_input(b, p, seed)
        .map("scale", |v| (v * 2.0 - 1.0) * 3.0)
        .unwrap()
}

/// Worst tensor-relative error over all parameters of `model` at one point.
pub fn gradcheck(model: &GeccoModel, x: &Tensor2D, labels: &[usize], mode: Mode) -> Vec<(String, f64)> {
    let (h, _) = gradcheck_step_and_tolerance();
    let mut m = model.clone();
    m.set_mode(mode);
    let trace = m.forward(x, None).unwrap();
    let grads = gecco::train::backward(&m, &trace, labels).unwrap();
    let fd = finite_difference(&m, x, labels, h, mode);
    m.parameters()
        .iter()
        .zip(grads.tensors().iter().zip(&fd))
        .map(|((name, _), (a, n))| (name.clone(), tensor_relative_error(a, n)))
        .collect()
}
