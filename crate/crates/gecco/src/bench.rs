//! Inference latency and throughput.
//!
//! Latency is the wall-clock time of one batched inference, from flattening
//! the images already in memory to the class probabilities. Throughput is
//! images per millisecond for that run.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{vectorize, GeccoModel, Mode, ModelConfig, ModelError};
use crate::tensor::Tensor2D;

pub const CSV_HEADER: &str = "batch,runs,latency_ms_mean,latency_ms_std,throughput_mean,throughput_std";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 1 warmup run")]
    NoWarmup,
    #[error("need at least 2 timed runs for a standard deviation, got {0}")]
    TooFewRuns(usize),
    #[error("model is in train mode; benchmark an eval-mode model")]
    TrainMode,
    #[error("latency sample {index} is {value} ms; samples must be positive and finite")]
    BadSample { index: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub batch_size: usize,
    pub runs: usize,
    pub latency_ms_mean: f64,
    pub latency_ms_std: f64,
    /// Images per millisecond.
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub latencies_ms: Vec<f64>,
    pub throughputs: Vec<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl BenchReport {
    /// Builds a report from raw per-run latencies in milliseconds.
    pub fn from_samples(batch_size: usize, latencies_ms: Vec<f64>) -> Result<Self, BenchError> {
        if latencies_ms.len() < 2 {
            return Err(BenchError::TooFewRuns(latencies_ms.len()));
        }
        if let Some((index, &value)) = latencies_ms
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(BenchError::BadSample { index, value });
        }
        let throughputs: Vec<f64> = latencies_ms.iter().map(|l| batch_size as f64 / l).collect();
        let (latency_ms_mean, latency_ms_std) = mean_std(&latencies_ms);
        let (throughput_mean, throughput_std) = mean_std(&throughputs);
        Ok(BenchReport {
            batch_size,
            runs: latencies_ms.len(),
            latency_ms_mean,
            latency_ms_std,
            throughput_mean,
            throughput_std,
            latencies_ms,
            throughputs,
        })
    }

    pub fn per_image_latency_ms(&self) -> f64 {
        self.latency_ms_mean / self.batch_size as f64
    }

    /// A CSV row matching [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            self.batch_size,
            self.runs,
            self.latency_ms_mean,
            self.latency_ms_std,
            self.throughput_mean,
            self.throughput_std
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch size   {}", self.batch_size);
        let _ = writeln!(s, "timed runs   {}", self.runs);
        let _ = writeln!(
            s,
            "latency      {:.4} ± {:.4} ms",
            self.latency_ms_mean, self.latency_ms_std
        );
        let _ = writeln!(
            s,
            "throughput   {:.4} ± {:.4} imgs/ms",
            self.throughput_mean, self.throughput_std
        );
        let _ = writeln!(s, "per image    {:.6} ms", self.per_image_latency_ms());
        s
    }
}

pub fn to_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Times `timed_runs` eval-mode inferences on `images` after discarding
/// `warmup_runs`.
pub fn bench_inference(
    model: &GeccoModel,
    images: &[Tensor2D],
    warmup_runs: usize,
    timed_runs: usize,
) -> Result<BenchReport, BenchError> {
    if warmup_runs < 1 {
        return Err(BenchError::NoWarmup);
    }
    if timed_runs < 2 {
        return Err(BenchError::TooFewRuns(timed_runs));
    }
    if model.mode() == Mode::Train {
        return Err(BenchError::TrainMode);
    }
    let run = || -> Result<(), BenchError> {
        let x = vectorize(images)?;
        std::hint::black_box(model.forward(&x, None)?);
        Ok(())
    };
    for _ in 0..warmup_runs {
        run()?;
    }
    let mut samples = Vec::with_capacity(timed_runs);
    for _ in 0..timed_runs {
        let start = Instant::now();
        run()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    BenchReport::from_samples(images.len(), samples)
}

/// Uniform random images in `[0, 1)` shaped for `config`.
pub fn synthetic_images(config: &ModelConfig, count: usize, seed: u64) -> Vec<Tensor2D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Tensor2D::from_fn(config.image_h, config.image_w, |_, _| rng.gen()))
        .collect()
}

/// One report per config, in order, each on `config.batch_size` synthetic
/// images and a model from `factory`.
pub fn bench_sweep<F>(
    configs: &[ModelConfig],
    mut factory: F,
    seed: u64,
    warmup_runs: usize,
    timed_runs: usize,
) -> Result<Vec<BenchReport>, BenchError>
where
    F: FnMut(&ModelConfig) -> Result<GeccoModel, ModelError>,
{
    configs
        .iter()
        .map(|cfg| {
            let model = factory(cfg)?;
            let images = synthetic_images(cfg, cfg.batch_size, seed);
            bench_inference(&model, &images, warmup_runs, timed_runs)
        })
        .collect()
}
