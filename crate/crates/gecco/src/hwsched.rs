//! Kernel schedule for a layer-by-layer accelerator with shared compute
//! units, and an on-chip memory estimate for loading everything once.
//!
//! Each inference layer maps to one or more units:
//!
//! | layer            | units                                                |
//! |------------------|------------------------------------------------------|
//! | fully connected  | matmul                                               |
//! | graph conv       | matmul, activation, elementwise, matrix_addition     |
//! | attention        | matmul, activation, elementwise                      |
//! | max pool         | max_pooling                                          |
//! | activation       | activation                                           |
//! | batch norm       | batch_normalization                                  |
//!
//! Flattening the input is an elementwise record. Dropout is the identity at
//! inference and emits nothing. Column and row sums, the attention division
//! and the residual add run on the elementwise unit. The matrix-addition
//! record of a graph layer is the `H W_self` term.

use std::fmt::Write as _;

use crate::complexity::count_parameters;
use crate::model::ModelConfig;

/// On-chip memory of the reference accelerator board, in bytes.
pub const DEFAULT_BUDGET_BYTES: u64 = 35_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelUnit {
    Matmul,
    Activation,
    Elementwise,
    MatrixAddition,
    MaxPooling,
    BatchNormalization,
}

impl KernelUnit {
    pub const ALL: [KernelUnit; 6] = [
        KernelUnit::Matmul,
        KernelUnit::Activation,
        KernelUnit::Elementwise,
        KernelUnit::MatrixAddition,
        KernelUnit::MaxPooling,
        KernelUnit::BatchNormalization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelUnit::Matmul => "matmul",
            KernelUnit::Activation => "activation",
            KernelUnit::Elementwise => "elementwise",
            KernelUnit::MatrixAddition => "matrix_addition",
            KernelUnit::MaxPooling => "max_pooling",
            KernelUnit::BatchNormalization => "batch_normalization",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Flatten,
    FullyConnected,
    Relu,
    GraphConv,
    BatchNorm,
    MaxPool,
    Attention,
    Classifier,
    Softmax,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Flatten => "flatten",
            LayerKind::FullyConnected => "fc",
            LayerKind::Relu => "relu",
            LayerKind::GraphConv => "graph_conv",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::MaxPool => "max_pool",
            LayerKind::Attention => "attention",
            LayerKind::Classifier => "classifier",
            LayerKind::Softmax => "softmax",
        }
    }

    /// Units in the order the mapping lists them.
    pub fn units(self) -> &'static [KernelUnit] {
        use KernelUnit::*;
        match self {
            LayerKind::Flatten => &[Elementwise],
            LayerKind::FullyConnected | LayerKind::Classifier => &[Matmul],
            LayerKind::Relu | LayerKind::Softmax => &[Activation],
            LayerKind::GraphConv => &[Matmul, Activation, Elementwise, MatrixAddition],
            LayerKind::BatchNorm => &[BatchNormalization],
            LayerKind::MaxPool => &[MaxPooling],
            LayerKind::Attention => &[Matmul, Activation, Elementwise],
        }
    }
}

pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRecord {
    pub layer_index: usize,
    pub layer: LayerKind,
    pub unit: KernelUnit,
    pub operands: Vec<Shape>,
    pub output: Shape,
    /// Operands plus output at the schedule's scalar width.
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSchedule {
    pub batch_size: usize,
    pub bytes_per_scalar: u64,
    pub records: Vec<KernelRecord>,
}

/// One inference layer with the buffers it reads, writes and needs as
/// scratch, in scalars.
#[derive(Debug, Clone, PartialEq)]
struct PlannedLayer {
    kind: LayerKind,
    reads: u64,
    writes: u64,
    scratch: u64,
}

fn elems(s: Shape) -> u64 {
    (s.0 * s.1) as u64
}

fn layer_list(config: &ModelConfig) -> Vec<LayerKind> {
    let b = config.batch_size;
    let mut layers = vec![
        LayerKind::Flatten,
        LayerKind::FullyConnected,
        LayerKind::Relu,
        LayerKind::Relu,
    ];
    if config.graph_active(b) {
        layers.extend(std::iter::repeat_n(LayerKind::GraphConv, config.gcn_layers));
        layers.push(LayerKind::BatchNorm);
    }
    layers.push(LayerKind::MaxPool);
    if config.attention_active(b) {
        layers.push(LayerKind::Attention);
    }
    layers.push(LayerKind::Classifier);
    layers.push(LayerKind::Softmax);
    layers
}

/// Operand and output shapes of every record of one layer, in unit order.
fn unit_shapes(config: &ModelConfig, kind: LayerKind) -> Vec<(Vec<Shape>, Shape)> {
    let b = config.batch_size;
    let p = config.input_len();
    let dd = config.d_out;
    let d = config.pooled_len();
    let c = config.num_classes;
    match kind {
        LayerKind::Flatten => vec![(vec![(b, p)], (b, p))],
        LayerKind::FullyConnected => vec![(vec![(b, p), (p, dd), (1, dd)], (b, dd))],
        LayerKind::Relu => vec![(vec![(b, dd)], (b, dd))],
        LayerKind::GraphConv => {
            let mut mm = vec![(b, b), (b, dd), (dd, dd)];
            if config.self_weight {
                mm.push((dd, dd));
            }
            vec![
                (mm, (b, dd)),
                (vec![(b, dd)], (b, dd)),
                // adjacency construction
                (vec![(b, b)], (b, b)),
                (vec![(b, dd), (b, dd)], (b, dd)),
            ]
        }
        LayerKind::BatchNorm => vec![(vec![(b, dd), (1, dd), (1, dd), (1, dd), (1, dd)], (b, dd))],
        LayerKind::MaxPool => vec![(vec![(b, dd)], (b, d))],
        LayerKind::Attention => vec![
            (vec![(b, d), (d, b), (b, b)], (b, d)),
            (vec![(b, b)], (b, b)),
            (vec![(b, b), (1, b), (b, d), (b, d)], (b, d)),
        ],
        LayerKind::Classifier => vec![(vec![(b, d), (d, c), (1, c)], (b, c))],
        LayerKind::Softmax => vec![(vec![(b, c)], (b, c))],
    }
}

/// Kernel records for one inference of a batch of `config.batch_size`
/// images, in execution order.
pub fn emit_schedule(config: &ModelConfig, bytes_per_scalar: u64) -> KernelSchedule {
    let mut records = Vec::new();
    for (i, kind) in layer_list(config).into_iter().enumerate() {
        let shapes = unit_shapes(config, kind);
        debug_assert_eq!(shapes.len(), kind.units().len());
        for (&unit, (operands, output)) in kind.units().iter().zip(shapes) {
            let bytes = (operands.iter().map(|&s| elems(s)).sum::<u64>() + elems(output)) * bytes_per_scalar;
            records.push(KernelRecord {
                layer_index: i,
                layer: kind,
                unit,
                operands,
                output,
                bytes,
            });
        }
    }
    KernelSchedule {
        batch_size: config.batch_size,
        bytes_per_scalar,
        records,
    }
}

fn plan(config: &ModelConfig) -> Vec<PlannedLayer> {
    let b = config.batch_size as u64;
    let dd = config.d_out as u64;
    let d = config.pooled_len() as u64;
    let c = config.num_classes as u64;
    let layer = |kind, reads, writes, scratch| PlannedLayer {
        kind,
        reads,
        writes,
        scratch,
    };
    layer_list(config)
        .into_iter()
        .map(|kind| match kind {
            // the input batch is accounted separately and flattening is a view
            LayerKind::Flatten => layer(kind, 0, 0, 0),
            LayerKind::FullyConnected => layer(kind, 0, b * dd, 0),
            LayerKind::Relu | LayerKind::BatchNorm => layer(kind, b * dd, b * dd, 0),
            LayerKind::GraphConv => {
                let self_term = if config.self_weight { b * dd } else { 0 };
                layer(kind, b * dd, b * dd, b * b + 2 * b * dd + self_term)
            }
            LayerKind::MaxPool => layer(kind, b * dd, b * d, 0),
            // similarity, column sums, mixing matrix and the mixed features
            LayerKind::Attention => layer(kind, b * d, b * d, 2 * b * b + b + b * d),
            LayerKind::Classifier => layer(kind, b * d, b * c, 0),
            LayerKind::Softmax => layer(kind, b * c, b * c, 0),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEstimate {
    pub parameter_bytes: u64,
    pub input_bytes: u64,
    /// Largest set of simultaneously live intermediates.
    pub peak_intermediate_bytes: u64,
    /// Layer at which the peak occurs.
    pub peak_layer: LayerKind,
    pub total_bytes: u64,
    pub budget_bytes: u64,
    pub feasible: bool,
}

/// Resident bytes when weights and the input batch are loaded once and every
/// intermediate stays on chip. An intermediate is live from the layer that
/// writes it through the layer that reads it; the layer chain is linear, so
/// the live set at each layer is its input, its output and its scratch.
pub fn estimate_single_load_memory(config: &ModelConfig, bytes_per_scalar: u64, budget_bytes: u64) -> MemoryEstimate {
    let (peak_layer, peak) = plan(config)
        .iter()
        .map(|l| (l.kind, l.reads + l.writes + l.scratch))
        .fold(
            (LayerKind::Flatten, 0),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    let parameter_bytes = count_parameters(config) as u64 * bytes_per_scalar;
    let input_bytes = (config.batch_size * config.input_len()) as u64 * bytes_per_scalar;
    let peak_intermediate_bytes = peak * bytes_per_scalar;
    let total_bytes = parameter_bytes + input_bytes + peak_intermediate_bytes;
    MemoryEstimate {
        parameter_bytes,
        input_bytes,
        peak_intermediate_bytes,
        peak_layer,
        total_bytes,
        budget_bytes,
        feasible: total_bytes <= budget_bytes,
    }
}

fn shape_list(shapes: &[Shape]) -> String {
    shapes
        .iter()
        .map(|(r, c)| format!("{r}x{c}"))
        .collect::<Vec<_>>()
        .join(";")
}

impl KernelSchedule {
    pub fn units(&self) -> Vec<KernelUnit> {
        self.records.iter().map(|r| r.unit).collect()
    }

    /// `layer:unit` tokens, one per record.
    pub fn tokens(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| format!("{}:{}", r.layer.as_str(), r.unit.as_str()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>3} {:>5}  {:<11} {:<20} {:<36} {:<10} {:>12}",
            "#", "layer", "kind", "unit", "operands", "output", "bytes"
        );
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>3} {:>5}  {:<11} {:<20} {:<36} {:<10} {:>12}",
                i,
                r.layer_index,
                r.layer.as_str(),
                r.unit.as_str(),
                shape_list(&r.operands),
                shape_list(&[r.output]),
                r.bytes
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,layer_index,layer,unit,operands,output,bytes\n");
        for (i, r) in self.records.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                i,
                r.layer_index,
                r.layer.as_str(),
                r.unit.as_str(),
                shape_list(&r.operands),
                shape_list(&[r.output]),
                r.bytes
            );
        }
        s
    }
}

impl MemoryEstimate {
    pub fn to_text(&self) -> String {
        let mb = |b: u64| b as f64 / 1e6;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "parameters      {:>12} B  {:>9.3} MB",
            self.parameter_bytes,
            mb(self.parameter_bytes)
        );
        let _ = writeln!(
            s,
            "input batch     {:>12} B  {:>9.3} MB",
            self.input_bytes,
            mb(self.input_bytes)
        );
        let _ = writeln!(
            s,
            "peak live       {:>12} B  {:>9.3} MB  (at {})",
            self.peak_intermediate_bytes,
            mb(self.peak_intermediate_bytes),
            self.peak_layer.as_str()
        );
        let _ = writeln!(
            s,
            "total           {:>12} B  {:>9.3} MB",
            self.total_bytes,
            mb(self.total_bytes)
        );
        let _ = writeln!(
            s,
            "budget          {:>12} B  {:>9.3} MB",
            self.budget_bytes,
            mb(self.budget_bytes)
        );
        let _ = writeln!(
            s,
            "single load     {}",
            if self.feasible { "feasible" } else { "infeasible" }
        );
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "parameter_bytes,input_bytes,peak_intermediate_bytes,peak_layer,total_bytes,budget_bytes,feasible\n{},{},{},{},{},{},{}\n",
            self.parameter_bytes,
            self.input_bytes,
            self.peak_intermediate_bytes,
            self.peak_layer.as_str(),
            self.total_bytes,
            self.budget_bytes,
            self.feasible
        )
    }
}
