//! `key = value` run configuration files.
//!
//! ```text
//! # MNIST-style run
//! profile      = mnist
//! train_images = data/train-images-idx3-ubyte
//! train_labels = data/train-labels-idx1-ubyte
//! epochs       = 15
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. Relative paths are resolved against the file's directory. Keys
//! left out take their defaults, and [`RunConfig::defaulted`] lists them so
//! callers can report what was assumed.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `profile` | `mstar` | base sizes: `mstar` 128x128/86/10, `cxr` 224x224/112/2, `mnist` 28x28/86/10 |
//! | `train_images`, `train_labels` | none | IDX training set |
//! | `test_images`, `test_labels` | none | IDX evaluation set |
//! | `train_dir`, `test_dir` | none | PGM class-directory trees (instead of IDX) |
//! | `image_h`, `image_w` | profile | model input size; data is resized to it |
//! | `d_out` | profile | fully connected width |
//! | `classes` | profile | class count |
//! | `batch_size` | 64 | |
//! | `dropout` | 0.5 | |
//! | `gcn_layers` | 1 | |
//! | `use_gcn`, `use_attention`, `self_weight` | true | |
//! | `adjacency` | `row-normalized` | or `all-ones` |
//! | `epochs` | 15 | |
//! | `lr` | 0.001 | Adam step size |
//! | `seed` | 0 | |

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{self, DataError, Dataset, PgmOptions, ResizeFilter};
use crate::model::{AdjacencyMode, ModelConfig};

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: `{key}` given more than once")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: `{key} = {value}`: expected {expected}")]
    Value {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, RunConfigError>;

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    PgmDir(PathBuf),
}

impl DataSource {
    /// Loads the data and resizes it to `shape` when it differs.
    pub fn load(&self, shape: (usize, usize)) -> std::result::Result<Dataset, DataError> {
        match self {
            DataSource::Idx { images, labels } => {
                let ds = data::load_idx(images, labels)?;
                if ds.image_shape() == shape {
                    Ok(ds)
                } else {
                    ds.resized(shape.0, shape.1, ResizeFilter::Bilinear)
                }
            }
            DataSource::PgmDir(root) => data::load_pgm_dir(
                root,
                PgmOptions {
                    resize: Some(shape),
                    filter: ResizeFilter::Bilinear,
                },
            ),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSource::Idx { images, labels } => format!("{} + {}", images.display(), labels.display()),
            DataSource::PgmDir(root) => root.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: Option<DataSource>,
    pub test: Option<DataSource>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Keys that were not given, with the value assumed for each.
    pub defaulted: Vec<(&'static str, String)>,
}

const KEYS: &[&str] = &[
    "profile",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_dir",
    "test_dir",
    "image_h",
    "image_w",
    "d_out",
    "classes",
    "batch_size",
    "dropout",
    "gcn_layers",
    "use_gcn",
    "use_attention",
    "self_weight",
    "adjacency",
    "epochs",
    "lr",
    "seed",
];

/// Keys whose absence is unremarkable, so no notice is recorded.
const OPTIONAL: &[&str] = &[
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_dir",
    "test_dir",
];

struct Entries {
    values: HashMap<&'static str, (usize, String)>,
    defaulted: Vec<(&'static str, String)>,
}

impl Entries {
    fn raw(&self, key: &'static str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn get<T>(&mut self, key: &'static str, default: T, expected: &'static str) -> Result<T>
    where
        T: std::str::FromStr + std::fmt::Display,
    {
        match self.values.get(key) {
            Some((line, v)) => v.parse().map_err(|_| RunConfigError::Value {
                line: *line,
                key: key.into(),
                value: v.clone(),
                expected,
            }),
            None => {
                self.defaulted.push((key, default.to_string()));
                Ok(default)
            }
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(RunConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(RunConfigError::Syntax { line });
            }
            let key = *KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| RunConfigError::UnknownKey { line, key: key.into() })?;
            if values.insert(key, (line, value.to_string())).is_some() {
                return Err(RunConfigError::Duplicate { line, key: key.into() });
            }
        }
        let mut e = Entries {
            values,
            defaulted: Vec::new(),
        };

        let profile: String = e.get("profile", "mstar".to_string(), "mstar, cxr or mnist")?;
        let base = match profile.as_str() {
            "mstar" => ModelConfig::mstar(),
            "cxr" => ModelConfig::cxr(),
            "mnist" => ModelConfig::mnist(),
            _ => {
                let (line, v) = e.raw("profile").cloned().unwrap_or_default();
                return Err(RunConfigError::Value {
                    line,
                    key: "profile".into(),
                    value: v,
                    expected: "mstar, cxr or mnist",
                });
            }
        };
        let flag = "true or false";
        let count = "a non-negative integer";
        let mut model = base.clone();
        model.image_h = e.get("image_h", base.image_h, count)?;
        model.image_w = e.get("image_w", base.image_w, count)?;
        model.d_out = e.get("d_out", base.d_out, count)?;
        model.num_classes = e.get("classes", base.num_classes, count)?;
        model.batch_size = e.get("batch_size", base.batch_size, count)?;
        model.dropout_rate = e.get("dropout", base.dropout_rate, "a number in [0, 1)")?;
        model.gcn_layers = e.get("gcn_layers", base.gcn_layers, count)?;
        model.use_gcn = e.get("use_gcn", base.use_gcn, flag)?;
        model.use_attention = e.get("use_attention", base.use_attention, flag)?;
        model.self_weight = e.get("self_weight", base.self_weight, flag)?;
        let adjacency: String = e.get(
            "adjacency",
            base.adjacency_mode.as_str().to_string(),
            "all-ones or row-normalized",
        )?;
        model.adjacency_mode = AdjacencyMode::parse(&adjacency).ok_or_else(|| {
            let line = e.raw("adjacency").map(|r| r.0).unwrap_or(0);
            RunConfigError::Value {
                line,
                key: "adjacency".into(),
                value: adjacency.clone(),
                expected: "all-ones or row-normalized",
            }
        })?;
        let epochs = e.get("epochs", 15usize, count)?;
        let lr: f64 = e.get("lr", 1e-3, "a positive number")?;
        let seed = e.get("seed", 0u64, count)?;
        model
            .validate()
            .map_err(|err| RunConfigError::Invalid(err.to_string()))?;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(RunConfigError::Invalid(format!("lr = {lr} must be positive")));
        }

        let path = |key: &'static str| e.raw(key).map(|(_, v)| base_dir.join(v));
        let source = |images: &'static str, labels: &'static str, dir: &'static str| -> Result<Option<DataSource>> {
            match (path(images), path(labels), path(dir)) {
                (None, None, None) => Ok(None),
                (Some(images), Some(labels), None) => Ok(Some(DataSource::Idx { images, labels })),
                (None, None, Some(root)) => Ok(Some(DataSource::PgmDir(root))),
                (Some(_), None, None) | (None, Some(_), None) => Err(RunConfigError::Invalid(format!(
                    "`{images}` and `{labels}` must be given together"
                ))),
                _ => Err(RunConfigError::Invalid(format!(
                    "give either `{images}`/`{labels}` or `{dir}`, not both"
                ))),
            }
        };
        let train = source("train_images", "train_labels", "train_dir")?;
        let test = source("test_images", "test_labels", "test_dir")?;

        let defaulted = e.defaulted.into_iter().filter(|(k, _)| !OPTIONAL.contains(k)).collect();
        Ok(RunConfig {
            model,
            train,
            test,
            epochs,
            lr,
            seed,
            defaulted,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
