//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GECO"                     magic
//! u16                        format version (1)
//! u32 x 6                    image_h, image_w, d_out, num_classes, batch_size, gcn_layers
//! f64                        dropout rate
//! u8 x 4                     use_gcn, use_attention, adjacency (0 all-ones, 1 row-normalized), self_weight
//! u32                        class count, then per class: u32 byte length + UTF-8 name
//! u8                         1 if batch-norm running statistics follow, else 0
//! [tensor, tensor]           running mean, running variance
//! u32                        parameter tensor count
//! tensor ...                 parameters in GeccoModel::parameters order
//! u32                        CRC-32 (IEEE) of every preceding byte
//!
//! tensor = u32 rows, u32 cols, rows*cols f32 values in row-major order
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{AdjacencyMode, BatchNorm, GcnLayer, GeccoModel, ModelConfig, ModelError};
use crate::tensor::{Real, Tensor2D};

pub const MAGIC: &[u8; 4] = b"GECO";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not describe a valid model: {0}")]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

/// A trained model together with the names of its output classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GeccoModel,
    pub class_names: Vec<String>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value exceeds u32").to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor2D) {
    put_u32(out, t.rows());
    put_u32(out, t.cols());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn flag(&mut self, what: &'static str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(CheckpointError::Format(format!("{what} flag is {v}"))),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self, what: &'static str) -> Result<Tensor2D> {
        let rows = self.u32(what)?;
        let cols = self.u32(what)?;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Format(format!("{what} shape {rows}x{cols} overflows")))?;
        let raw = self.take(len, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect();
        Tensor2D::new(rows, cols, data).map_err(|e| CheckpointError::Format(format!("{what}: {e}")))
    }
}

impl Checkpoint {
    pub fn new(model: GeccoModel, class_names: Vec<String>) -> Self {
        Checkpoint { model, class_names }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let c = self.model.config();
        for v in [c.image_h, c.image_w, c.d_out, c.num_classes, c.batch_size, c.gcn_layers] {
            put_u32(&mut out, v);
        }
        out.extend_from_slice(&c.dropout_rate.to_le_bytes());
        let adjacency = match c.adjacency_mode {
            AdjacencyMode::AllOnes => 0u8,
            AdjacencyMode::RowNormalized => 1,
        };
        out.extend_from_slice(&[c.use_gcn as u8, c.use_attention as u8, adjacency, c.self_weight as u8]);
        put_u32(&mut out, self.class_names.len());
        for name in &self.class_names {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
        }
        match &self.model.bn {
            Some(bn) => {
                out.push(1);
                put_tensor(&mut out, &bn.running_mean);
                put_tensor(&mut out, &bn.running_var);
            }
            None => out.push(0),
        }
        let params = self.model.parameters();
        put_u32(&mut out, params.len());
        for (_, t) in params {
            put_tensor(&mut out, t);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 4 {
            return Err(CheckpointError::Truncated("header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if &body[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        let mut r = Reader { bytes: &body[4..] };
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let image_h = r.u32("image_h")?;
        let image_w = r.u32("image_w")?;
        let d_out = r.u32("d_out")?;
        let num_classes = r.u32("num_classes")?;
        let batch_size = r.u32("batch_size")?;
        let gcn_layers = r.u32("gcn_layers")?;
        let dropout_rate = f64::from_le_bytes(r.take(8, "dropout")?.try_into().unwrap());
        let use_gcn = r.flag("use_gcn")?;
        let use_attention = r.flag("use_attention")?;
        let adjacency_mode = match r.u8("adjacency")? {
            0 => AdjacencyMode::AllOnes,
            1 => AdjacencyMode::RowNormalized,
            v => return Err(CheckpointError::Format(format!("unknown adjacency mode {v}"))),
        };
        let self_weight = r.flag("self_weight")?;
        let config = ModelConfig {
            image_h,
            image_w,
            d_out,
            num_classes,
            batch_size,
            dropout_rate,
            gcn_layers,
            use_gcn,
            use_attention,
            adjacency_mode,
            self_weight,
        };
        config.validate()?;

        let n_names = r.u32("class count")?;
        if n_names != num_classes {
            return Err(CheckpointError::Format(format!(
                "{n_names} class names for {num_classes} classes"
            )));
        }
        let mut class_names = Vec::with_capacity(n_names);
        for _ in 0..n_names {
            let len = r.u32("class name")?;
            let raw = r.take(len, "class name")?;
            let name =
                std::str::from_utf8(raw).map_err(|_| CheckpointError::Format("class name is not UTF-8".into()))?;
            class_names.push(name.to_string());
        }

        let running = if r.flag("batch-norm flag")? {
            Some((r.tensor("running mean")?, r.tensor("running variance")?))
        } else {
            None
        };

        let count = r.u32("parameter count")?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            tensors.push(r.tensor("parameter")?);
        }
        if !r.bytes.is_empty() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", r.bytes.len())));
        }

        let per_layer = if config.self_weight { 2 } else { 1 };
        let layers = if config.has_graph() { config.gcn_layers } else { 0 };
        let expected = 4 + layers * per_layer + if config.has_graph() { 2 } else { 0 };
        if tensors.len() != expected {
            return Err(CheckpointError::Format(format!(
                "{} parameter tensors, configuration needs {expected}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().unwrap();
        let w1 = next();
        let b1 = next();
        let gcn = (0..layers)
            .map(|_| GcnLayer {
                neighbor: next(),
                self_weight: config.self_weight.then(&mut next),
            })
            .collect();
        let bn = if config.has_graph() {
            let gamma = next();
            let beta = next();
            let (running_mean, running_var) =
                running.ok_or_else(|| CheckpointError::Format("batch-norm running statistics missing".into()))?;
            Some(BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            })
        } else {
            None
        };
        let w_cls = next();
        let b_cls = next();
        let model = GeccoModel::from_parts(config, w1, b1, gcn, bn, w_cls, b_cls)?;
        Ok(Checkpoint { model, class_names })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
