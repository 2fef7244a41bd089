//! A shallow grayscale image classifier that treats each minibatch as a
//! complete graph, with the tooling around it: a hand-derived training engine,
//! analytic complexity counts, a latency/throughput harness and an
//! accelerator kernel-schedule emitter.
//!
//! ```
//! use gecco::model::{GeccoModel, ModelConfig};
//! use gecco::tensor::Tensor2D;
//!
//! let model = GeccoModel::new(ModelConfig::new(4, 4, 8, 3), 7).unwrap();
//! let x = Tensor2D::filled(5, 16, 0.5);
//! let trace = model.forward(&x, None).unwrap();
//! assert_eq!(trace.probabilities.shape(), (5, 3));
//! ```

// Casts between `Real` and a fixed float type are no-ops in one build or the
// other.
#![allow(clippy::unnecessary_cast)]

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod complexity;
pub mod data;
pub mod hwsched;
pub mod mac;
pub mod model;
pub mod runconfig;
pub mod tensor;
pub mod train;

pub use data::{Batch, Dataset};
pub use model::{GeccoModel, ModelConfig};
pub use tensor::{Real, Tensor2D};
