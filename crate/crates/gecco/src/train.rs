//! Cross-entropy loss, the hand-derived backward pass, Adam, and the
//! training loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{batches, DataError, Dataset};
use crate::model::{ForwardPath, ForwardTrace, GeccoModel, Mode, ModelError};
use crate::tensor::{Real, Tensor2D, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("trace does not match the model: {0}")]
    Mismatch(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::Model(m) if m.is_numeric())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of `labels` under row-wise `probabilities`.
pub fn cross_entropy(probabilities: &Tensor2D, labels: &[usize]) -> Result<Real> {
    check_labels(probabilities, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -(probabilities.get(b, l) as f64).max(PROB_FLOOR).ln())
        .sum();
    Ok((total / labels.len() as f64) as Real)
}

fn check_labels(probabilities: &Tensor2D, labels: &[usize]) -> Result<()> {
    if labels.len() != probabilities.rows() {
        return Err(TrainError::Mismatch(format!(
            "{} labels for a batch of {}",
            labels.len(),
            probabilities.rows()
        )));
    }
    let classes = probabilities.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::Label { label, classes });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub neighbor: Tensor2D,
    pub self_weight: Option<Tensor2D>,
}

/// Loss gradient for every trainable tensor of a [`GeccoModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Tensor2D,
    pub b1: Tensor2D,
    pub gcn: Vec<GcnGradients>,
    pub bn_gamma: Option<Tensor2D>,
    pub bn_beta: Option<Tensor2D>,
    pub w_cls: Tensor2D,
    pub b_cls: Tensor2D,
}

impl Gradients {
    /// Same order as [`GeccoModel::parameters`].
    pub fn tensors(&self) -> Vec<&Tensor2D> {
        let mut out = vec![&self.w1, &self.b1];
        for g in &self.gcn {
            out.push(&g.neighbor);
            if let Some(w) = &g.self_weight {
                out.push(w);
            }
        }
        out.extend(self.bn_gamma.iter());
        out.extend(self.bn_beta.iter());
        out.push(&self.w_cls);
        out.push(&self.b_cls);
        out
    }
}

/// Scatters pooled gradients back to the columns that won the max.
fn maxpool_backward(grad: &Tensor2D, argmax: &[usize], in_cols: usize) -> Tensor2D {
    let mut out = Tensor2D::zeros(grad.rows(), in_cols);
    for r in 0..grad.rows() {
        for w in 0..grad.cols() {
            let src = argmax[r * grad.cols() + w];
            let v = out.get(r, src) + grad.get(r, w);
            out.set(r, src, v);
        }
    }
    out
}

/// Gradients of the mean cross-entropy through attention, residual and the
/// head: returns `dL/dX4` along with the head gradients.
fn head_backward(model: &GeccoModel, trace: &ForwardTrace, labels: &[usize]) -> Result<(Tensor2D, Tensor2D, Tensor2D)> {
    let b = labels.len();
    let mut dlogits = trace.probabilities.clone();
    for (r, &l) in labels.iter().enumerate() {
        let v = dlogits.get(r, l) - 1.0;
        dlogits.set(r, l, v);
    }
    let dlogits = dlogits.scale(1.0 / b as Real)?;
    let dw_cls = trace.x6.transpose().matmul(&dlogits)?;
    let db_cls = dlogits.column_sums();
    let dx6 = dlogits.matmul(&model.w_cls.transpose())?;

    let dx4 = match &trace.attention {
        None => dx6,
        Some(att) => {
            let x4 = &trace.x4;
            // X6 = M X4 + X4: direct residual path and M's right operand
            let mut dx4 = dx6.add(&att.mixing.transpose().matmul(&dx6)?)?;
            // through M = S / colsum(S)
            let dm = dx6.matmul(&x4.transpose())?;
            let mut ds = Tensor2D::zeros(b, b);
            for j in 0..b {
                let c = att.column_sums.get(0, j);
                let t: Real = (0..b).map(|k| dm.get(k, j) * att.mixing.get(k, j)).sum();
                for i in 0..b {
                    ds.set(i, j, (dm.get(i, j) - t) / c);
                }
            }
            // through S = sigmoid(X4 X4^T)
            let s = &att.similarity;
            let dg = Tensor2D::from_fn(b, b, |i, j| {
                let v = s.get(i, j);
                ds.get(i, j) * v * (1.0 - v)
            });
            let sym = dg.add(&dg.transpose())?;
            dx4 = dx4.add(&sym.matmul(x4)?)?;
            dx4
        }
    };
    Ok((dx4, dw_cls, db_cls))
}

/// Exact gradients of `cross_entropy(forward(x), labels)` with respect to
/// every parameter, reusing the intermediates in `trace`.
///
/// Batch norm is differentiated through the batch statistics for train-mode
/// traces and as a fixed affine map for eval-mode traces.
pub fn backward(model: &GeccoModel, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients> {
    let cfg = model.config();
    check_labels(&trace.probabilities, labels)?;
    if trace.x1.cols() != cfg.input_len() || trace.logits.cols() != cfg.num_classes {
        return Err(TrainError::Mismatch(format!(
            "trace input {:?} / logits {:?} vs model {} -> {}",
            trace.x1.shape(),
            trace.logits.shape(),
            cfg.input_len(),
            cfg.num_classes
        )));
    }
    if trace.gcn.len()
        != if trace.path == ForwardPath::Graph {
            model.gcn.len()
        } else {
            0
        }
    {
        return Err(TrainError::Mismatch("graph layer count".into()));
    }
    let b = labels.len();
    let d = cfg.d_out;

    let (dx4, w_cls, b_cls) = head_backward(model, trace, labels)?;
    let dpooled_src = maxpool_backward(&dx4, &trace.pool_argmax, d);

    let mut gcn_grads = Vec::new();
    let mut bn_gamma = None;
    let mut bn_beta = None;
    let dx3 = match (&trace.path, &trace.bn, &model.bn) {
        (ForwardPath::Graph, Some(bn_trace), Some(bn)) => {
            let dy = dpooled_src;
            let (xhat, scale) = match &bn_trace.cache {
                Some(cache) => (cache.xhat.clone(), cache.inv_std.clone()),
                None => {
                    let inv = bn
                        .running_var
                        .map("batchnorm", |v| 1.0 / (v + crate::model::BN_EPS).sqrt())?;
                    let xhat = Tensor2D::from_fn(b, d, |r, c| {
                        (bn_trace.input.get(r, c) - bn.running_mean.get(0, c)) * inv.get(0, c)
                    });
                    (xhat, inv)
                }
            };
            let mut dgamma = Tensor2D::zeros(1, d);
            let mut dbeta = Tensor2D::zeros(1, d);
            for r in 0..b {
                for c in 0..d {
                    dgamma.set(0, c, dgamma.get(0, c) + dy.get(r, c) * xhat.get(r, c));
                    dbeta.set(0, c, dbeta.get(0, c) + dy.get(r, c));
                }
            }
            let dxhat = Tensor2D::from_fn(b, d, |r, c| dy.get(r, c) * bn.gamma.get(0, c));
            let mut dh = Tensor2D::zeros(b, d);
            if bn_trace.cache.is_some() {
                let n = b as Real;
                for c in 0..d {
                    let mut sum = 0.0;
                    let mut dot = 0.0;
                    for r in 0..b {
                        sum += dxhat.get(r, c);
                        dot += dxhat.get(r, c) * xhat.get(r, c);
                    }
                    for r in 0..b {
                        let v = scale.get(0, c) / n * (n * dxhat.get(r, c) - sum - xhat.get(r, c) * dot);
                        dh.set(r, c, v);
                    }
                }
            } else {
                for r in 0..b {
                    for c in 0..d {
                        dh.set(r, c, dxhat.get(r, c) * scale.get(0, c));
                    }
                }
            }
            bn_gamma = Some(dgamma);
            bn_beta = Some(dbeta);

            let adjacency_t = cfg.adjacency_mode.matrix(b).transpose();
            for (layer, lt) in model.gcn.iter().zip(&trace.gcn).rev() {
                let out = &lt.output;
                let dz = Tensor2D::from_fn(b, d, |r, c| {
                    let o = out.get(r, c);
                    dh.get(r, c) * o * (1.0 - o)
                });
                let neighbor = lt.aggregated.transpose().matmul(&dz)?;
                let mut dinput = adjacency_t.matmul(&dz.matmul(&layer.neighbor.transpose())?)?;
                let self_weight = match &layer.self_weight {
                    Some(ws) => {
                        dinput = dinput.add(&dz.matmul(&ws.transpose())?)?;
                        Some(lt.input.transpose().matmul(&dz)?)
                    }
                    None => None,
                };
                gcn_grads.push(GcnGradients { neighbor, self_weight });
                dh = dinput;
            }
            gcn_grads.reverse();
            dh
        }
        (ForwardPath::Bypass, _, _) => dpooled_src,
        _ => return Err(TrainError::Mismatch("graph trace without batch norm".into())),
    };

    // X3 = relu(dropped), dropped = X2 * mask, X2 = relu(Z1)
    let mut dz1 = dx3;
    for (i, v) in dz1.data_mut().iter_mut().enumerate() {
        let keep = trace.dropped.data()[i] > 0.0 && trace.z1.data()[i] > 0.0;
        let m = trace.dropout_mask.as_ref().map_or(1.0, |m| m.data()[i]);
        *v = if keep { *v * m } else { 0.0 };
    }
    let w1 = trace.x1.transpose().matmul(&dz1)?;
    let b1 = dz1.column_sums();

    let grads = Gradients {
        w1,
        b1,
        gcn: gcn_grads,
        bn_gamma,
        bn_beta,
        w_cls,
        b_cls,
    };
    for t in grads.tensors() {
        t.check_finite("backward")?;
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
}

impl AdamState {
    pub fn new(model: &GeccoModel, config: AdamConfig) -> Self {
        Self::for_shapes(model.parameters().iter().map(|(_, t)| t.shape()), config)
    }

    pub fn for_shapes(shapes: impl IntoIterator<Item = (usize, usize)>, config: AdamConfig) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Tensor2D::zeros(r, c), Tensor2D::zeros(r, c)))
            .unzip();
        AdamState { config, step: 0, m, v }
    }

    /// One bias-corrected Adam update of `model` with `grads`.
    pub fn step(&mut self, model: &mut GeccoModel, grads: &Gradients) -> Result<()> {
        self.step_tensors(model.parameters_mut(), grads.tensors())
    }

    pub fn step_tensors(&mut self, params: Vec<&mut Tensor2D>, grads: Vec<&Tensor2D>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Mismatch(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TrainError::Mismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = g as f64;
                let m1 = beta1 * *m as f64 + (1.0 - beta1) * g;
                let v1 = beta2 * *v as f64 + (1.0 - beta2) * g * g;
                *m = m1 as Real;
                *v = v1 as Real;
                let update = lr * (m1 / c1) / ((v1 / c2).sqrt() + eps);
                *p = (*p as f64 - update) as Real;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 15,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training-batch loss.
    pub loss: f64,
    /// Eval-mode accuracy on the training set after the epoch.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let (c, t) = self.per_class[class];
        (t > 0).then(|| c as f64 / t as f64)
    }
}

/// Eval-mode accuracy over `dataset` in batches of `batch_size`, keeping the
/// final partial batch.
pub fn evaluate(model: &GeccoModel, dataset: &Dataset, batch_size: usize) -> Result<EvalReport> {
    if dataset.num_classes() > model.config().num_classes {
        return Err(TrainError::Mismatch(format!(
            "dataset has {} classes, model has {}",
            dataset.num_classes(),
            model.config().num_classes
        )));
    }
    let mut eval_model;
    let model = if model.mode() == Mode::Eval {
        model
    } else {
        eval_model = model.clone();
        eval_model.set_mode(Mode::Eval);
        &eval_model
    };
    let mut per_class = vec![(0, 0); model.config().num_classes];
    let mut correct = 0;
    for batch in batches(dataset, batch_size, None, false)? {
        let pred = model.forward(&batch.x, None)?.predictions();
        for (&p, &l) in pred.iter().zip(&batch.labels) {
            per_class[l].1 += 1;
            if p == l {
                per_class[l].0 += 1;
                correct += 1;
            }
        }
    }
    Ok(EvalReport {
        correct,
        total: dataset.len(),
        per_class,
    })
}

/// Runs one optimizer step on a batch and returns the batch loss.
pub fn train_step(
    model: &mut GeccoModel,
    adam: &mut AdamState,
    x: &Tensor2D,
    labels: &[usize],
    dropout_seed: u64,
) -> Result<Real> {
    model.set_mode(Mode::Train);
    let trace = model.forward(x, Some(dropout_seed))?;
    let loss = cross_entropy(&trace.probabilities, labels)?;
    let grads = backward(model, &trace, labels)?;
    adam.step(model, &grads)?;
    model.apply_batch_stats(&trace);
    Ok(loss)
}

/// Trains for `options.epochs` epochs with batches of the model's configured
/// size, dropping each epoch's final partial batch. Shuffling and dropout are
/// driven by `options.seed`, so identical inputs give identical parameters.
/// Leaves the model in eval mode.
pub fn train_loop(
    model: &mut GeccoModel,
    train_data: &Dataset,
    eval_data: Option<&Dataset>,
    options: &TrainOptions,
) -> Result<TrainReport> {
    train_loop_with(model, train_data, eval_data, options, |_| {})
}

/// [`train_loop`] with a callback invoked after every epoch.
pub fn train_loop_with(
    model: &mut GeccoModel,
    train_data: &Dataset,
    eval_data: Option<&Dataset>,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if train_data.is_empty() {
        return Err(DataError::Empty.into());
    }
    let batch_size = model.config().batch_size;
    let mut report = TrainReport::default();
    if options.epochs == 0 {
        return Ok(report);
    }
    let mut adam = AdamState::new(model, options.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for epoch in 1..=options.epochs {
        let start = Instant::now();
        let shuffle_seed: u64 = rng.gen();
        let mut loss_sum = 0.0;
        let epoch_batches = batches(train_data, batch_size, Some(shuffle_seed), true)?;
        for batch in &epoch_batches {
            let loss = train_step(model, &mut adam, &batch.x, &batch.labels, rng.gen())?;
            loss_sum += loss as f64;
        }
        model.set_mode(Mode::Eval);
        let train_accuracy = evaluate(model, train_data, batch_size)?.accuracy();
        let eval_accuracy = match eval_data {
            Some(ds) => Some(evaluate(model, ds, batch_size)?.accuracy()),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            loss: loss_sum / epoch_batches.len() as f64,
            train_accuracy,
            eval_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    model.set_mode(Mode::Eval);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn cross_entropy_cases() {
        let onehot = Tensor2D::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&onehot, &[1]).unwrap(), 0.0);
        let uniform = Tensor2D::filled(2, 4, 0.25);
        assert!((cross_entropy(&uniform, &[0, 3]).unwrap() - 4f32.ln() as Real).abs() < 1e-6);
        // clamp keeps log finite
        assert!((cross_entropy(&onehot, &[0]).unwrap() as f64 - 27.631021).abs() < 1e-4);
        assert!(matches!(
            cross_entropy(&uniform, &[0, 4]),
            Err(TrainError::Label { label: 4, classes: 4 })
        ));
        assert!(cross_entropy(&uniform, &[0]).is_err());

        let p = Tensor2D::from_rows(&[[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]]).unwrap();
        let want = -(0.5f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((cross_entropy(&p, &[2, 0]).unwrap() as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn classifier_bias_gradient_is_centered_softmax() {
        let mut cfg = ModelConfig::new(2, 2, 4, 4);
        cfg.dropout_rate = 0.0;
        cfg.use_gcn = false;
        cfg.use_attention = false;
        let mut model = GeccoModel::new(cfg, 0).unwrap();
        model.w_cls = Tensor2D::zeros(2, 4);
        let x = Tensor2D::filled(4, 4, 0.5);
        let labels = [0, 1, 2, 3];
        let trace = model.forward(&x, None).unwrap();
        let g = backward(&model, &trace, &labels).unwrap();
        // equal logits: p = 1/C per class; the mean of (p - onehot) is 0 per class
        for c in 0..4 {
            assert!(g.b_cls.get(0, c).abs() < 1e-7);
        }
        let g = backward(&model, &trace, &[0, 0, 0, 0]).unwrap();
        assert!((g.b_cls.get(0, 0) - (0.25 - 1.0)).abs() < 1e-6);
        assert!((g.b_cls.get(0, 1) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let cfg = ModelConfig::new(2, 2, 4, 2);
        let mut model = GeccoModel::new(cfg, 1).unwrap();
        let before = model.clone();
        let zeros = Gradients {
            w1: Tensor2D::zeros(4, 4),
            b1: Tensor2D::zeros(1, 4),
            gcn: vec![GcnGradients {
                neighbor: Tensor2D::zeros(4, 4),
                self_weight: Some(Tensor2D::zeros(4, 4)),
            }],
            bn_gamma: Some(Tensor2D::zeros(1, 4)),
            bn_beta: Some(Tensor2D::zeros(1, 4)),
            w_cls: Tensor2D::zeros(2, 2),
            b_cls: Tensor2D::zeros(1, 2),
        };
        let mut adam = AdamState::new(&model, AdamConfig::default());
        adam.step(&mut model, &zeros).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = Tensor2D::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        let g = Tensor2D::from_rows(&[[3.0, -0.01, 250.0]]).unwrap();
        let mut adam = AdamState::for_shapes([(1, 3)], AdamConfig::default());
        adam.step_tensors(vec![&mut p], vec![&g]).unwrap();
        for (v, want) in p.data().iter().zip([1.0 - 1e-3, 1.0 + 1e-3, 1.0 - 1e-3]) {
            assert!((v - want).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_matches_scalar_oracle_on_quadratic() {
        // f(x) = (x - 3)^2, 10 steps
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = Tensor2D::filled(1, 1, 0.5);
        let mut adam = AdamState::for_shapes([(1, 1)], cfg);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = Tensor2D::filled(1, 1, 2.0 * (p.get(0, 0) - 3.0));
            adam.step_tensors(vec![&mut p], vec![&g]).unwrap();

            let gx = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * gx;
            v = 0.999 * v + 0.001 * gx * gx;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.get(0, 0) as f64 - x).abs() < 1e-6, "step {t}");
        }
    }

    #[test]
    fn backward_rejects_mismatched_labels() {
        let cfg = ModelConfig::new(2, 2, 4, 2);
        let model = GeccoModel::new(cfg, 1).unwrap();
        let x = Tensor2D::filled(3, 4, 0.1);
        let trace = model.forward(&x, None).unwrap();
        assert!(backward(&model, &trace, &[0, 1]).is_err());
        assert!(backward(&model, &trace, &[0, 1, 2]).is_err());
    }
}
