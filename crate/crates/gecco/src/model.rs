//! The classifier: vectorized images, one fully connected layer, a
//! graph convolution over the minibatch, batch-wise attention with a residual
//! connection, and a linear classification head.
//!
//! ```text
//! X1 = flatten(images)                      B x (H*W)
//! X2 = relu(X1 W1 + b1)                     B x D
//! X3 = relu(dropout(X2))                    B x D
//! X4 = maxpool2(batchnorm(gcn(X3)))         B x floor(D/2)
//! S  = sigmoid(X4 X4^T), M = S / colsum(S)  B x B
//! X6 = M X4 + X4                            B x floor(D/2)
//! P  = softmax(X6 Wc + bc)                  B x C
//! ```
//!
//! A batch of one, or a model with the graph path switched off, skips the
//! graph convolution and batch norm and feeds `maxpool2(X3)` to the head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Real, Tensor2D, TensorError};

pub const BN_EPS: Real = 1e-5;
pub const BN_MOMENTUM: Real = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match the model (expected {expected})")]
    Input { got: (usize, usize), expected: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl ModelError {
    /// True when the failure is a NaN/Inf produced during computation.
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::Tensor(TensorError::NonFinite { .. }))
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How the batch adjacency is populated. Both variants connect every image
/// to every image of the batch, itself included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyMode {
    /// `A_ij = 1`.
    AllOnes,
    /// `A_ij = 1 / B`, every row sums to one.
    RowNormalized,
}

impl AdjacencyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdjacencyMode::AllOnes => "all-ones",
            AdjacencyMode::RowNormalized => "row-normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all-ones" => Some(AdjacencyMode::AllOnes),
            "row-normalized" => Some(AdjacencyMode::RowNormalized),
            _ => None,
        }
    }

    /// Dense `B x B` adjacency for a batch of `b` images.
    pub fn matrix(self, b: usize) -> Tensor2D {
        match self {
            AdjacencyMode::AllOnes => Tensor2D::filled(b, b, 1.0),
            AdjacencyMode::RowNormalized => Tensor2D::filled(b, b, 1.0 / b as Real),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Width of the fully connected layer and the graph features.
    pub d_out: usize,
    pub num_classes: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub gcn_layers: usize,
    pub use_gcn: bool,
    pub use_attention: bool,
    pub adjacency_mode: AdjacencyMode,
    /// Adds a per-node term `H W_self` inside the graph convolution's
    /// sigmoid, so each image keeps its own features next to the batch
    /// aggregate.
    pub self_weight: bool,
}

impl ModelConfig {
    /// Canonical configuration for the given input size, feature length and
    /// class count: one graph layer, attention on, batch 64, dropout 0.5.
    pub fn new(image_h: usize, image_w: usize, d_out: usize, num_classes: usize) -> Self {
        ModelConfig {
            image_h,
            image_w,
            d_out,
            num_classes,
            batch_size: 64,
            dropout_rate: 0.5,
            gcn_layers: 1,
            use_gcn: true,
            use_attention: true,
            adjacency_mode: AdjacencyMode::RowNormalized,
            self_weight: true,
        }
    }

    /// 128x128 SAR chips, 10 classes, feature length 86.
    pub fn mstar() -> Self {
        Self::new(128, 128, 86, 10)
    }

    /// 224x224 chest X-rays, 2 classes, feature length 112.
    pub fn cxr() -> Self {
        Self::new(224, 224, 112, 2)
    }

    /// 28x28 digits, 10 classes, feature length 86.
    pub fn mnist() -> Self {
        Self::new(28, 28, 86, 10)
    }

    /// The graph convolution exactly as `sigmoid(A X3 W2)` with an all-ones
    /// adjacency and no per-node term.
    pub fn literal_graph(mut self) -> Self {
        self.adjacency_mode = AdjacencyMode::AllOnes;
        self.self_weight = false;
        self
    }

    pub fn input_len(&self) -> usize {
        self.image_h * self.image_w
    }

    /// Feature width after max-pooling by 2.
    pub fn pooled_len(&self) -> usize {
        self.d_out / 2
    }

    /// Whether the model owns graph-convolution and batch-norm parameters.
    pub fn has_graph(&self) -> bool {
        self.use_gcn && self.gcn_layers > 0
    }

    /// Whether a batch of `b` images goes through the graph path.
    pub fn graph_active(&self, b: usize) -> bool {
        self.has_graph() && b > 1
    }

    pub fn attention_active(&self, b: usize) -> bool {
        self.use_attention && b > 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.image_h == 0 || self.image_w == 0 {
            return fail(format!(
                "image size {}x{} must be at least 1x1",
                self.image_h, self.image_w
            ));
        }
        if self.d_out < 2 {
            return fail(format!("d_out = {} must be at least 2", self.d_out));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes = {} must be at least 2", self.num_classes));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate = {} must be in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// `D x D` weight applied to the aggregated neighbourhood.
    pub neighbor: Tensor2D,
    /// `D x D` weight applied to the node itself, when enabled.
    pub self_weight: Option<Tensor2D>,
}

/// Per-feature batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor2D,
    pub beta: Tensor2D,
    pub running_mean: Tensor2D,
    pub running_var: Tensor2D,
}

/// Batch statistics captured by a train-mode batch-norm pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mean: Tensor2D,
    /// Biased (population) variance used for normalization.
    pub var: Tensor2D,
    /// Unbiased variance folded into the running estimate.
    pub unbiased_var: Tensor2D,
    pub inv_std: Tensor2D,
    pub xhat: Tensor2D,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor2D::filled(1, features, 1.0),
            beta: Tensor2D::zeros(1, features),
            running_mean: Tensor2D::zeros(1, features),
            running_var: Tensor2D::filled(1, features, 1.0),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    /// Normalizes each column of `x`. Train mode uses the batch statistics
    /// and returns them; eval mode uses the running estimates.
    pub fn forward(&self, x: &Tensor2D, mode: Mode) -> Result<(Tensor2D, Option<BnCache>)> {
        let (b, d) = x.shape();
        if d != self.features() {
            return Err(TensorError::Shape {
                op: "batchnorm",
                left: x.shape(),
                right: self.gamma.shape(),
            }
            .into());
        }
        match mode {
            Mode::Eval => {
                let mut out = x.clone();
                for r in 0..b {
                    for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                        let inv = 1.0 / (self.running_var.get(0, c) + BN_EPS).sqrt();
                        *v = (*v - self.running_mean.get(0, c)) * inv * self.gamma.get(0, c) + self.beta.get(0, c);
                    }
                }
                out.check_finite("batchnorm")?;
                Ok((out, None))
            }
            Mode::Train => {
                if b < 2 {
                    return Err(ModelError::Config(
                        "batch norm in train mode needs at least 2 samples; \
                         use eval mode or a larger batch"
                            .into(),
                    ));
                }
                let n = b as Real;
                let mut mean = Tensor2D::zeros(1, d);
                let mut var = Tensor2D::zeros(1, d);
                for c in 0..d {
                    let mut s = 0.0;
                    for r in 0..b {
                        s += x.get(r, c);
                    }
                    let m = s / n;
                    let mut q = 0.0;
                    for r in 0..b {
                        let e = x.get(r, c) - m;
                        q += e * e;
                    }
                    mean.set(0, c, m);
                    var.set(0, c, q / n);
                }
                let inv_std = var.map("batchnorm", |v| 1.0 / (v + BN_EPS).sqrt())?;
                let unbiased_var = var.scale(n / (n - 1.0))?;
                let mut xhat = x.clone();
                let mut out = x.clone();
                for r in 0..b {
                    for c in 0..d {
                        let h = (x.get(r, c) - mean.get(0, c)) * inv_std.get(0, c);
                        xhat.set(r, c, h);
                        out.set(r, c, h * self.gamma.get(0, c) + self.beta.get(0, c));
                    }
                }
                out.check_finite("batchnorm")?;
                Ok((
                    out,
                    Some(BnCache {
                        mean,
                        var,
                        unbiased_var,
                        inv_std,
                        xhat,
                    }),
                ))
            }
        }
    }

    /// Exponential moving average update of the running statistics.
    pub fn update_running(&mut self, cache: &BnCache) {
        let mix = |run: &mut Tensor2D, batch: &Tensor2D| {
            for (r, &v) in run.data_mut().iter_mut().zip(batch.data()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        };
        mix(&mut self.running_mean, &cache.mean);
        mix(&mut self.running_var, &cache.unbiased_var);
    }
}

/// Intermediates of the batch-wise attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `sigmoid(X4 X4^T)`.
    pub similarity: Tensor2D,
    /// Column sums of `similarity`, `1 x B`.
    pub column_sums: Tensor2D,
    /// Column-normalized similarity.
    pub mixing: Tensor2D,
    /// `mixing · X4`.
    pub mixed: Tensor2D,
}

/// `S = sigmoid(X X^T)`, `M_ij = S_ij / sum_k S_kj`, `X5 = M X`.
pub fn attention(x4: &Tensor2D) -> Result<AttentionTrace> {
    let similarity = x4.matmul(&x4.transpose())?.sigmoid();
    let column_sums = similarity.column_sums();
    let b = x4.rows();
    let mut mixing = similarity.clone();
    for r in 0..b {
        for (c, v) in mixing.row_mut(r).iter_mut().enumerate() {
            *v /= column_sums.get(0, c);
        }
    }
    mixing.check_finite("attention")?;
    let mixed = mixing.matmul(x4)?;
    Ok(AttentionTrace {
        similarity,
        column_sums,
        mixing,
        mixed,
    })
}

/// The `B x B` matrix that mixes image features across the batch; every
/// column sums to one.
pub fn attention_mixing_matrix(x4: &Tensor2D) -> Result<Tensor2D> {
    attention(x4).map(|t| t.mixing)
}

/// Row-major flattening of a batch of equally sized images.
pub fn vectorize(images: &[Tensor2D]) -> Result<Tensor2D> {
    let first = images.first().ok_or_else(|| ModelError::Input {
        got: (0, 0),
        expected: "at least one image".into(),
    })?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.shape() != (h, w) {
            return Err(TensorError::Shape {
                op: "vectorize",
                left: (h, w),
                right: img.shape(),
            }
            .into());
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor2D::new(images.len(), h * w, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardPath {
    /// Graph convolution and batch norm ran.
    Graph,
    /// Batch of one or graph disabled: `maxpool2(X3)` went to the head.
    Bypass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnTrace {
    pub input: Tensor2D,
    /// `A · input`.
    pub aggregated: Tensor2D,
    /// `sigmoid(aggregated W2 [+ input Ws])`.
    pub output: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnTrace {
    pub input: Tensor2D,
    pub output: Tensor2D,
    /// Present in train mode.
    pub cache: Option<BnCache>,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<'a> {
    pub mode: Mode,
    pub path: ForwardPath,
    /// The input batch, borrowed.
    pub x1: &'a Tensor2D,
    /// `X1 W1 + b1` before the ReLU.
    pub z1: Tensor2D,
    pub x2: Tensor2D,
    /// Inverted-dropout multipliers (`0` or `1 / (1 - p)`), train mode only.
    pub dropout_mask: Option<Tensor2D>,
    /// `X2` after dropout, before the second ReLU.
    pub dropped: Tensor2D,
    pub x3: Tensor2D,
    pub gcn: Vec<GcnTrace>,
    pub bn: Option<BnTrace>,
    /// Source column of each pooled entry, row-major over `x4`.
    pub pool_argmax: Vec<usize>,
    pub x4: Tensor2D,
    pub attention: Option<AttentionTrace>,
    pub x6: Tensor2D,
    pub logits: Tensor2D,
    pub probabilities: Tensor2D,
}

impl ForwardTrace<'_> {
    pub fn batch_size(&self) -> usize {
        self.x1.rows()
    }

    pub fn x5(&self) -> Option<&Tensor2D> {
        self.attention.as_ref().map(|a| &a.mixed)
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probabilities.argmax_rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeccoModel {
    config: ModelConfig,
    pub w1: Tensor2D,
    pub b1: Tensor2D,
    pub gcn: Vec<GcnLayer>,
    pub bn: Option<BatchNorm>,
    pub w_cls: Tensor2D,
    pub b_cls: Tensor2D,
    mode: Mode,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor2D::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit) as Real)
}

impl GeccoModel {
    /// Glorot-uniform weights from a seeded generator, zero biases, identity
    /// batch norm. The model starts in eval mode.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = config.input_len();
        let d = config.d_out;
        let w1 = glorot(p, d, &mut rng);
        let gcn = if config.has_graph() {
            (0..config.gcn_layers)
                .map(|_| GcnLayer {
                    neighbor: glorot(d, d, &mut rng),
                    self_weight: config.self_weight.then(|| glorot(d, d, &mut rng)),
                })
                .collect()
        } else {
            Vec::new()
        };
        let bn = config.has_graph().then(|| BatchNorm::new(d));
        let w_cls = glorot(config.pooled_len(), config.num_classes, &mut rng);
        Ok(GeccoModel {
            b1: Tensor2D::zeros(1, d),
            b_cls: Tensor2D::zeros(1, config.num_classes),
            config,
            w1,
            gcn,
            bn,
            w_cls,
            mode: Mode::Eval,
        })
    }

    /// Assembles a model from explicit parameters, checking every shape
    /// against `config`.
    pub fn from_parts(
        config: ModelConfig,
        w1: Tensor2D,
        b1: Tensor2D,
        gcn: Vec<GcnLayer>,
        bn: Option<BatchNorm>,
        w_cls: Tensor2D,
        b_cls: Tensor2D,
    ) -> Result<Self> {
        config.validate()?;
        let model = GeccoModel {
            config,
            w1,
            b1,
            gcn,
            bn,
            w_cls,
            b_cls,
            mode: Mode::Eval,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let d = c.d_out;
        let expect = |name: &str, t: &Tensor2D, shape: (usize, usize)| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(ModelError::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
        };
        expect("w1", &self.w1, (c.input_len(), d))?;
        expect("b1", &self.b1, (1, d))?;
        expect("w_cls", &self.w_cls, (c.pooled_len(), c.num_classes))?;
        expect("b_cls", &self.b_cls, (1, c.num_classes))?;
        let layers = if c.has_graph() { c.gcn_layers } else { 0 };
        if self.gcn.len() != layers {
            return Err(ModelError::Config(format!(
                "{} graph layers present, configuration needs {layers}",
                self.gcn.len()
            )));
        }
        for layer in &self.gcn {
            expect("w2", &layer.neighbor, (d, d))?;
            match (&layer.self_weight, c.self_weight) {
                (Some(w), true) => expect("w_self", w, (d, d))?,
                (None, false) => {}
                _ => {
                    return Err(ModelError::Config(
                        "self-weight presence does not match configuration".into(),
                    ))
                }
            }
        }
        match (&self.bn, c.has_graph()) {
            (Some(bn), true) => {
                expect("bn_gamma", &bn.gamma, (1, d))?;
                expect("bn_beta", &bn.beta, (1, d))?;
                expect("bn_running_mean", &bn.running_mean, (1, d))?;
                expect("bn_running_var", &bn.running_var, (1, d))?;
                if bn.running_var.data().iter().any(|&v| v <= 0.0) {
                    return Err(ModelError::Config(
                        "batch-norm running variance must be positive".into(),
                    ));
                }
            }
            (None, false) => {}
            _ => {
                return Err(ModelError::Config(
                    "batch-norm presence does not match configuration".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Parameter tensors with their names, in a fixed order shared by
    /// [`Gradients`](crate::train::Gradients), the optimizer and checkpoints.
    pub fn parameters(&self) -> Vec<(String, &Tensor2D)> {
        let mut out = vec![("w1".to_string(), &self.w1), ("b1".to_string(), &self.b1)];
        for (i, layer) in self.gcn.iter().enumerate() {
            out.push((format!("gcn{i}.w2"), &layer.neighbor));
            if let Some(w) = &layer.self_weight {
                out.push((format!("gcn{i}.w_self"), w));
            }
        }
        if let Some(bn) = &self.bn {
            out.push(("bn.gamma".to_string(), &bn.gamma));
            out.push(("bn.beta".to_string(), &bn.beta));
        }
        out.push(("w_cls".to_string(), &self.w_cls));
        out.push(("b_cls".to_string(), &self.b_cls));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut out = vec![&mut self.w1, &mut self.b1];
        for layer in self.gcn.iter_mut() {
            out.push(&mut layer.neighbor);
            if let Some(w) = layer.self_weight.as_mut() {
                out.push(w);
            }
        }
        if let Some(bn) = self.bn.as_mut() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.w_cls);
        out.push(&mut self.b_cls);
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Runs the full pipeline on `x` (`B x H*W`). In train mode with a
    /// non-zero dropout rate `dropout_seed` must be given. Batch-norm running
    /// statistics are not touched; see [`apply_batch_stats`](Self::apply_batch_stats).
    pub fn forward<'a>(&self, x: &'a Tensor2D, dropout_seed: Option<u64>) -> Result<ForwardTrace<'a>> {
        let cfg = &self.config;
        if x.cols() != cfg.input_len() {
            return Err(ModelError::Input {
                got: x.shape(),
                expected: format!("B x {}", cfg.input_len()),
            });
        }
        x.check_finite("input")?;
        let b = x.rows();

        let z1 = x.matmul(&self.w1)?.row_broadcast_add(&self.b1)?;
        let x2 = z1.relu();

        let dropout_mask = match self.mode {
            Mode::Train if cfg.dropout_rate > 0.0 => {
                let seed = dropout_seed
                    .ok_or_else(|| ModelError::Config("train-mode forward with dropout needs a seed".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = cfg.dropout_rate;
                let keep = (1.0 / (1.0 - p)) as Real;
                Some(Tensor2D::from_fn(b, cfg.d_out, |_, _| {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        };
        let dropped = match &dropout_mask {
            Some(m) => x2.hadamard(m)?,
            None => x2.clone(),
        };
        let x3 = dropped.relu();

        let mut gcn = Vec::new();
        let mut bn_trace = None;
        let path;
        let graph_out = if cfg.graph_active(b) {
            path = ForwardPath::Graph;
            let adjacency = cfg.adjacency_mode.matrix(b);
            let mut h = x3.clone();
            for layer in &self.gcn {
                let aggregated = adjacency.matmul(&h)?;
                let mut pre = aggregated.matmul(&layer.neighbor)?;
                if let Some(ws) = &layer.self_weight {
                    pre = pre.add(&h.matmul(ws)?)?;
                }
                let output = pre.sigmoid();
                gcn.push(GcnTrace {
                    input: h,
                    aggregated,
                    output: output.clone(),
                });
                h = output;
            }
            let bn = self
                .bn
                .as_ref()
                .ok_or_else(|| ModelError::Config("graph path without batch norm".into()))?;
            let (normed, cache) = bn.forward(&h, self.mode)?;
            bn_trace = Some(BnTrace {
                input: h,
                output: normed.clone(),
                cache,
            });
            normed
        } else {
            path = ForwardPath::Bypass;
            x3.clone()
        };
        let (x4, pool_argmax) = graph_out.maxpool_with_argmax(2)?;

        let attention = if cfg.attention_active(b) {
            Some(attention(&x4)?)
        } else {
            None
        };
        let x6 = match &attention {
            Some(a) => a.mixed.add(&x4)?,
            None => x4.clone(),
        };
        let logits = x6.matmul(&self.w_cls)?.row_broadcast_add(&self.b_cls)?;
        let probabilities = logits.softmax_rows();
        probabilities.check_finite("softmax")?;

        Ok(ForwardTrace {
            mode: self.mode,
            path,
            x1: x,
            z1,
            x2,
            dropout_mask,
            dropped,
            x3,
            gcn,
            bn: bn_trace,
            pool_argmax,
            x4,
            attention,
            x6,
            logits,
            probabilities,
        })
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// batch-norm estimates. No-op for traces without batch statistics.
    pub fn apply_batch_stats(&mut self, trace: &ForwardTrace) {
        if let (Some(bn), Some(BnTrace { cache: Some(c), .. })) = (self.bn.as_mut(), &trace.bn) {
            bn.update_running(c);
        }
    }

    /// Eval-mode class predictions for a batch, regardless of current mode.
    pub fn predict(&self, x: &Tensor2D) -> Result<Vec<usize>> {
        if self.mode == Mode::Eval {
            return Ok(self.forward(x, None)?.predictions());
        }
        let mut eval = self.clone();
        eval.mode = Mode::Eval;
        Ok(eval.forward(x, None)?.predictions())
    }
}
