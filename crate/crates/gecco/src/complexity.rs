//! Analytic model complexity: parameters, multiply-accumulates per image,
//! storage size and layer count, with a per-layer breakdown.
//!
//! A MAC is one `a <- a + b * c`. Matrix products contribute `m * k * n`, and
//! the attention column sums contribute one MAC per summed entry (multiplier
//! 1). Everything else (bias adds, activations, the attention division,
//! batch-norm affine, pooling comparisons, softmax) is counted separately as
//! other operations, one per element produced.
//!
//! Layers are counted on the path a batch of `config.batch_size` images
//! actually executes, so a batch of one skips the graph and attention rows.

use std::fmt::Write as _;

use crate::model::ModelConfig;

/// Bits used to store one parameter.
pub const BITS_PER_PARAMETER: u64 = 32;

/// Figures published for the reference model on 128x128 inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedFigures {
    pub macs: f64,
    pub parameters: f64,
    pub model_size_megabits: f64,
    pub layers: usize,
}

pub const PUBLISHED: PublishedFigures = PublishedFigures {
    macs: 5.10e4,
    parameters: 5.08e4,
    model_size_megabits: 0.19,
    layers: 16,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Flatten,
    FullyConnected,
    Relu,
    Dropout,
    GraphAggregate,
    GraphTransform,
    GraphSigmoid,
    BatchNorm,
    MaxPool,
    AttentionSimilarity,
    AttentionNormalize,
    AttentionMix,
    Residual,
    Classifier,
    Softmax,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Flatten => "flatten",
            LayerKind::FullyConnected => "fc",
            LayerKind::Relu => "relu",
            LayerKind::Dropout => "dropout",
            LayerKind::GraphAggregate => "graph_aggregate",
            LayerKind::GraphTransform => "graph_transform",
            LayerKind::GraphSigmoid => "graph_sigmoid",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::MaxPool => "max_pool",
            LayerKind::AttentionSimilarity => "attention_similarity",
            LayerKind::AttentionNormalize => "attention_normalize",
            LayerKind::AttentionMix => "attention_mix",
            LayerKind::Residual => "residual",
            LayerKind::Classifier => "classifier",
            LayerKind::Softmax => "softmax",
        }
    }
}

/// One row of the breakdown. MAC and other-op counts are for the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub kind: LayerKind,
    /// Graph layer index for the graph rows.
    pub graph_layer: Option<usize>,
    pub output_shape: (usize, usize),
    pub parameters: usize,
    pub macs: u64,
    pub other_ops: u64,
}

impl LayerRow {
    pub fn name(&self) -> String {
        match self.graph_layer {
            Some(l) => format!("{}[{l}]", self.kind.as_str()),
            None => self.kind.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub batch_size: usize,
    /// MACs per image: one batch forward divided by the batch size.
    pub macs: u64,
    /// Non-MAC operations per image.
    pub other_ops: u64,
    pub parameters: usize,
    pub model_size_megabits: f64,
    pub layers: usize,
    pub breakdown: Vec<LayerRow>,
}

/// Layer rows for one eval-mode forward of `batch` images.
pub fn breakdown(config: &ModelConfig, batch: usize) -> Vec<LayerRow> {
    let b = batch as u64;
    let p = config.input_len() as u64;
    let dd = config.d_out as u64;
    let d = config.pooled_len() as u64;
    let c = config.num_classes as u64;
    let row = |kind, cols: u64, parameters: u64, macs: u64, other_ops: u64| LayerRow {
        kind,
        graph_layer: None,
        output_shape: (batch, cols as usize),
        parameters: parameters as usize,
        macs,
        other_ops,
    };

    let mut rows = vec![
        row(LayerKind::Flatten, p, 0, 0, 0),
        row(LayerKind::FullyConnected, dd, p * dd + dd, b * p * dd, b * dd),
        row(LayerKind::Relu, dd, 0, 0, b * dd),
        // identity at inference
        row(LayerKind::Dropout, dd, 0, 0, 0),
        row(LayerKind::Relu, dd, 0, 0, b * dd),
    ];
    if config.graph_active(batch) {
        let per_node = if config.self_weight { 2 } else { 1 };
        for l in 0..config.gcn_layers {
            let graph = [
                row(LayerKind::GraphAggregate, dd, 0, b * b * dd, 0),
                row(
                    LayerKind::GraphTransform,
                    dd,
                    per_node * dd * dd,
                    per_node * b * dd * dd,
                    (per_node - 1) * b * dd,
                ),
                row(LayerKind::GraphSigmoid, dd, 0, 0, b * dd),
            ];
            rows.extend(graph.into_iter().map(|r| LayerRow {
                graph_layer: Some(l),
                ..r
            }));
        }
        rows.push(row(LayerKind::BatchNorm, dd, 2 * dd, 0, b * dd));
    }
    rows.push(row(LayerKind::MaxPool, d, 0, 0, b * d));
    if config.attention_active(batch) {
        rows.extend([
            LayerRow {
                output_shape: (batch, batch),
                ..row(LayerKind::AttentionSimilarity, 0, 0, b * d * b, b * b)
            },
            LayerRow {
                output_shape: (batch, batch),
                ..row(LayerKind::AttentionNormalize, 0, 0, b * b, b * b)
            },
            row(LayerKind::AttentionMix, d, 0, b * b * d, 0),
            row(LayerKind::Residual, d, 0, 0, b * d),
        ]);
    }
    rows.push(row(LayerKind::Classifier, c, d * c + c, b * d * c, b * c));
    rows.push(row(LayerKind::Softmax, c, 0, 0, b * c));

    // parameters are owned even when a batch of one bypasses the graph
    if config.has_graph() && !config.graph_active(batch) {
        let per_node = if config.self_weight { 2 } else { 1 };
        let graph_params = config.gcn_layers as u64 * per_node * dd * dd + 2 * dd;
        rows[1].parameters += graph_params as usize;
    }
    rows
}

/// Trainable scalars in a model built from `config`.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let p = config.input_len();
    let dd = config.d_out;
    let d = config.pooled_len();
    let c = config.num_classes;
    let mut n = p * dd + dd + d * c + c;
    if config.has_graph() {
        let per_node = if config.self_weight { 2 } else { 1 };
        n += config.gcn_layers * per_node * dd * dd + 2 * dd;
    }
    n
}

/// MACs per image for one eval-mode forward of `batch_size` images.
pub fn count_macs(config: &ModelConfig, batch_size: usize) -> u64 {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let total: u64 = breakdown(config, batch_size).iter().map(|r| r.macs).sum();
    total / batch_size as u64
}

/// Layers executed by a batch of `config.batch_size` images.
pub fn count_layers(config: &ModelConfig) -> usize {
    breakdown(config, config.batch_size).len()
}

pub fn model_size_megabits(parameters: usize) -> f64 {
    (parameters as u64 * BITS_PER_PARAMETER) as f64 / 1e6
}

impl ComplexityReport {
    /// Report for a batch of `config.batch_size` images.
    pub fn new(config: &ModelConfig) -> Self {
        let batch = config.batch_size.max(1);
        let rows = breakdown(config, batch);
        let parameters = count_parameters(config);
        let b = batch as u64;
        ComplexityReport {
            batch_size: batch,
            macs: rows.iter().map(|r| r.macs).sum::<u64>() / b,
            other_ops: rows.iter().map(|r| r.other_ops).sum::<u64>() / b,
            parameters,
            model_size_megabits: model_size_megabits(parameters),
            layers: rows.len(),
            breakdown: rows,
        }
    }

    /// Aligned text table followed by totals and the published figures.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>3}  {:<24} {:>12} {:>12} {:>14} {:>12}",
            "#", "layer", "output", "params", "macs/batch", "other/batch"
        );
        for (i, r) in self.breakdown.iter().enumerate() {
            let shape = format!("{}x{}", r.output_shape.0, r.output_shape.1);
            let _ = writeln!(
                s,
                "{:>3}  {:<24} {:>12} {:>12} {:>14} {:>12}",
                i + 1,
                r.name(),
                shape,
                r.parameters,
                r.macs,
                r.other_ops
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "batch size        {}", self.batch_size);
        let _ = writeln!(s, "{:<17} {:>14} {:>14}", "", "computed", "published");
        let _ = writeln!(
            s,
            "{:<17} {:>14} {:>14.2e}",
            "macs per image", self.macs, PUBLISHED.macs
        );
        let _ = writeln!(
            s,
            "{:<17} {:>14} {:>14.2e}",
            "parameters", self.parameters, PUBLISHED.parameters
        );
        let _ = writeln!(
            s,
            "{:<17} {:>14.4} {:>14.2}",
            "size (Mb)", self.model_size_megabits, PUBLISHED.model_size_megabits
        );
        let _ = writeln!(s, "{:<17} {:>14} {:>14}", "layers", self.layers, PUBLISHED.layers);
        let _ = writeln!(s, "other ops/image   {}", self.other_ops);
        let _ = writeln!(
            s,
            "note: published figures are for 128x128 inputs with feature length 86; \
             the input layer alone holds {} weights at that size, so the published \
             parameter and MAC counts cannot include it. They are shown for reference, \
             not as targets.",
            128 * 128 * 86
        );
        s
    }

    /// One CSV row per layer, then a `total` row with per-image MACs and
    /// other ops.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,layer,output_rows,output_cols,parameters,macs,other_ops\n");
        for (i, r) in self.breakdown.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                i + 1,
                r.name(),
                r.output_shape.0,
                r.output_shape.1,
                r.parameters,
                r.macs,
                r.other_ops
            );
        }
        let _ = writeln!(
            s,
            "total,per_image,{},,{},{},{}",
            self.batch_size, self.parameters, self.macs, self.other_ops
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_parameters() {
        let mut cfg = ModelConfig::new(1, 1, 2, 2).literal_graph();
        cfg.gcn_layers = 1;
        assert_eq!(count_parameters(&cfg), 16);
    }

    #[test]
    fn fc_only_macs() {
        // with everything else disabled and one class column per pooled unit
        let mut cfg = ModelConfig::new(3, 5, 4, 2);
        cfg.use_gcn = false;
        cfg.use_attention = false;
        let fc = 15 * 4;
        let cls = 2 * 2;
        assert_eq!(count_macs(&cfg, 1), fc + cls);
        assert_eq!(count_macs(&cfg, 64), fc + cls);
    }

    #[test]
    fn canonical_taxonomy() {
        let cfg = ModelConfig::mstar();
        let names: Vec<String> = breakdown(&cfg, 64).iter().map(|r| r.name()).collect();
        assert_eq!(
            names,
            [
                "flatten",
                "fc",
                "relu",
                "dropout",
                "relu",
                "graph_aggregate[0]",
                "graph_transform[0]",
                "graph_sigmoid[0]",
                "batch_norm",
                "max_pool",
                "attention_similarity",
                "attention_normalize",
                "attention_mix",
                "residual",
                "classifier",
                "softmax"
            ]
        );
        assert_eq!(count_layers(&cfg), 16);
    }

    #[test]
    fn layer_increments() {
        let base = ModelConfig::mnist();
        let mut two = base.clone();
        two.gcn_layers = 2;
        assert_eq!(count_layers(&two), count_layers(&base) + 3);
        let mut bare = base.clone();
        bare.gcn_layers = 0;
        bare.use_attention = false;
        assert_eq!(count_layers(&bare), 8);
        let mut single = base.clone();
        single.batch_size = 1;
        assert_eq!(count_layers(&single), 8);
    }

    #[test]
    fn single_image_keeps_graph_parameters() {
        let mut cfg = ModelConfig::mnist();
        cfg.batch_size = 1;
        let rows = breakdown(&cfg, 1);
        let sum: usize = rows.iter().map(|r| r.parameters).sum();
        assert_eq!(sum, count_parameters(&cfg));
    }

    #[test]
    fn size_uses_32_bit_storage() {
        let r = ComplexityReport::new(&ModelConfig::mstar());
        assert_eq!(r.model_size_megabits, r.parameters as f64 * 32.0 / 1e6);
    }

    #[test]
    fn csv_has_one_row_per_layer_plus_total() {
        let r = ComplexityReport::new(&ModelConfig::mnist());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + r.layers + 1);
        assert!(csv.lines().last().unwrap().starts_with("total,per_image,64,"));
        assert!(r.to_text().contains("published"));
    }
}
