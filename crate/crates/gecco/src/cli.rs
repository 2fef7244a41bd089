//! The `gecco` command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data or
//! checkpoint error, 3 numeric failure during training.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchError};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::complexity::ComplexityReport;
use crate::data::{DataError, Dataset};
use crate::hwsched::{self, DEFAULT_BUDGET_BYTES};
use crate::model::{GeccoModel, ModelConfig, ModelError};
use crate::runconfig::{DataSource, RunConfig, RunConfigError};
use crate::train::{self, AdamConfig, EpochStats, TrainError, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gecco", version, about = "Batch-graph grayscale image classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a run configuration and write a checkpoint.
    Train(TrainArgs),
    /// Report top-1 and per-class accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Time batched inference.
    Bench(BenchArgs),
    /// Print parameter, MAC and layer counts.
    Count(ModelArgs),
    /// Print the accelerator kernel schedule and on-chip memory estimate.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Where to write the checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by `gecco train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run configuration whose test set (or training set, if none) is evaluated.
    #[arg(long, conflicts_with_all = ["images", "labels", "dir"])]
    config: Option<PathBuf>,
    /// IDX image file.
    #[arg(long, requires = "labels", conflicts_with = "dir")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Directory of per-class subdirectories holding PGM images.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Evaluation batch size; defaults to the checkpoint's.
    #[arg(long)]
    batch_size: Option<usize>,
}

/// Model description for commands that need no trained weights.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Run configuration file; overrides `--profile`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in size profile: mstar, cxr or mnist.
    #[arg(long, default_value = "mstar")]
    profile: String,
    /// Override the batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the number of graph layers.
    #[arg(long)]
    gcn_layers: Option<usize>,
    /// Disable the graph path.
    #[arg(long)]
    no_gcn: bool,
    /// Disable batch-wise attention.
    #[arg(long)]
    no_attention: bool,
    /// Emit CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// On-chip memory budget in bytes.
    #[arg(long, default_value_t = DEFAULT_BUDGET_BYTES)]
    budget_bytes: u64,
    /// Bytes per stored scalar.
    #[arg(long, default_value_t = 4)]
    bytes_per_scalar: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Checkpoint to time.
    #[arg(long, conflicts_with = "random_weights", required_unless_present = "random_weights")]
    checkpoint: Option<PathBuf>,
    /// Time a seeded untrained model described by the model flags.
    #[arg(long)]
    random_weights: bool,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated batch sizes; defaults to the configured one.
    #[arg(long, value_delimiter = ',')]
    batches: Vec<usize>,
    /// Untimed runs before measuring.
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Timed runs (at least 2).
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Seed for the random weights and synthetic images.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A failure with its exit code and one-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<RunConfigError> for CliError {
    fn from(e: RunConfigError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else if matches!(e, ModelError::Config(_)) {
            EXIT_CONFIG
        } else {
            EXIT_DATA
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Model(m) => m.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

type CmdResult = Result<(), CliError>;

fn io_err(e: std::io::Error) -> CliError {
    CliError::data(format!("write failed: {e}"))
}

fn report_defaults(rc: &RunConfig, err: &mut dyn Write) {
    for (key, value) in &rc.defaulted {
        let _ = writeln!(err, "notice: `{key}` not set, using {value}");
    }
}

fn model_config(args: &ModelArgs, err: &mut dyn Write) -> Result<ModelConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let rc = RunConfig::load(path)?;
            report_defaults(&rc, err);
            rc.model
        }
        None => match args.profile.as_str() {
            "mstar" => ModelConfig::mstar(),
            "cxr" => ModelConfig::cxr(),
            "mnist" => ModelConfig::mnist(),
            p => {
                return Err(CliError::config(format!(
                    "unknown profile `{p}`; use mstar, cxr or mnist"
                )))
            }
        },
    };
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(l) = args.gcn_layers {
        cfg.gcn_layers = l;
    }
    if args.no_gcn {
        cfg.use_gcn = false;
    }
    if args.no_attention {
        cfg.use_attention = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Relabels `ds` so its class names index into `names`.
fn align_classes(ds: Dataset, names: &[String]) -> Result<Dataset, CliError> {
    if ds.class_names() == names {
        return Ok(ds);
    }
    let mapping =
        ds.class_names()
            .iter()
            .map(|n| {
                names.iter().position(|m| m == n).ok_or_else(|| {
                    CliError::data(format!("dataset class `{n}` is not one of the checkpoint's classes"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
    let labels = ds.labels().iter().map(|&l| mapping[l]).collect();
    Ok(Dataset::new(ds.images().to_vec(), labels, names.to_vec())?)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let rc = RunConfig::load(&args.config)?;
    report_defaults(&rc, err);
    let source = rc.train.as_ref().ok_or_else(|| {
        CliError::config("configuration names no training data (train_images/train_labels or train_dir)")
    })?;
    let shape = (rc.model.image_h, rc.model.image_w);
    let train_ds = source.load(shape)?;
    if train_ds.num_classes() > rc.model.num_classes {
        return Err(CliError::data(format!(
            "training data has {} classes, configuration has {}",
            train_ds.num_classes(),
            rc.model.num_classes
        )));
    }
    let mut names = train_ds.class_names().to_vec();
    names.extend((names.len()..rc.model.num_classes).map(|i| i.to_string()));
    let test_ds = match &rc.test {
        Some(src) => Some(align_classes(src.load(shape)?, &names)?),
        None => None,
    };

    let seed = args.seed.unwrap_or(rc.seed);
    let options = TrainOptions {
        epochs: args.epochs.unwrap_or(rc.epochs),
        seed,
        adam: AdamConfig {
            lr: rc.lr,
            ..AdamConfig::default()
        },
    };
    let mut model = GeccoModel::new(rc.model.clone(), seed)?;
    writeln!(
        out,
        "{:>5} {:>10} {:>10} {:>10} {:>9}",
        "epoch", "loss", "train_acc", "eval_acc", "seconds"
    )
    .map_err(io_err)?;
    let print = |s: &EpochStats| {
        let eval = s.eval_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            out,
            "{:>5} {:>10.5} {:>10.4} {:>10} {:>9.2}",
            s.epoch, s.loss, s.train_accuracy, eval, s.seconds
        );
    };
    let report = train::train_loop_with(&mut model, &train_ds, test_ds.as_ref(), &options, print)?;
    if let Some(last) = report.last() {
        if !last.loss.is_finite() {
            return Err(CliError {
                code: EXIT_NUMERIC,
                message: format!("training loss became {} at epoch {}", last.loss, last.epoch),
            });
        }
    }
    Checkpoint::new(model, names).save(&args.out)?;
    writeln!(out, "checkpoint written to {}", args.out.display()).map_err(io_err)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = ck.model.config().clone();
    let shape = (cfg.image_h, cfg.image_w);
    let source = match (&args.config, &args.images, &args.labels, &args.dir) {
        (Some(path), ..) => {
            let rc = RunConfig::load(path)?;
            report_defaults(&rc, err);
            rc.test
                .or(rc.train)
                .ok_or_else(|| CliError::config("configuration names no dataset"))?
        }
        (None, Some(images), Some(labels), None) => DataSource::Idx {
            images: images.clone(),
            labels: labels.clone(),
        },
        (None, None, None, Some(dir)) => DataSource::PgmDir(dir.clone()),
        _ => return Err(CliError::config("give --config, --images with --labels, or --dir")),
    };
    let ds = align_classes(source.load(shape)?, &ck.class_names)?;
    let batch = args.batch_size.unwrap_or(cfg.batch_size);
    if batch == 0 {
        return Err(CliError::config("--batch-size must be at least 1"));
    }
    let report = train::evaluate(&ck.model, &ds, batch)?;
    writeln!(out, "samples   {}", report.total).map_err(io_err)?;
    writeln!(
        out,
        "accuracy  {:.4} ({}/{})",
        report.accuracy(),
        report.correct,
        report.total
    )
    .map_err(io_err)?;
    writeln!(out, "{:<16} {:>8} {:>8} {:>9}", "class", "correct", "total", "accuracy").map_err(io_err)?;
    for (i, name) in ck.class_names.iter().enumerate() {
        let (c, t) = report.per_class[i];
        let acc = report.class_accuracy(i).map_or("-".to_string(), |a| format!("{a:.4}"));
        writeln!(out, "{name:<16} {c:>8} {t:>8} {acc:>9}").map_err(io_err)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if args.runs < 2 {
        return Err(CliError::config(format!(
            "--runs must be at least 2 to estimate a standard deviation, got {}",
            args.runs
        )));
    }
    if args.warmup < 1 {
        return Err(CliError::config("--warmup must be at least 1"));
    }
    let model = match &args.checkpoint {
        Some(path) => Checkpoint::load(path)?.model,
        None => GeccoModel::new(model_config(&args.model, err)?, args.seed)?,
    };
    let cfg = model.config().clone();
    let sizes = if args.batches.is_empty() {
        vec![args.model.batch_size.unwrap_or(cfg.batch_size)]
    } else {
        args.batches.clone()
    };
    if sizes.contains(&0) {
        return Err(CliError::config("batch sizes must be at least 1"));
    }
    let mut reports = Vec::new();
    for &b in &sizes {
        let images = bench::synthetic_images(&cfg, b, args.seed);
        reports.push(bench::bench_inference(&model, &images, args.warmup, args.runs)?);
    }
    if args.model.csv {
        write!(out, "{}", bench::to_csv(&reports)).map_err(io_err)?;
    } else {
        for r in &reports {
            writeln!(out, "{}", r.to_text()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn cmd_count(args: ModelArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg = model_config(&args, err)?;
    let report = ComplexityReport::new(&cfg);
    let text = if args.csv { report.to_csv() } else { report.to_text() };
    write!(out, "{text}").map_err(io_err)
}

fn cmd_schedule(args: ScheduleArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if args.budget_bytes == 0 || args.bytes_per_scalar == 0 {
        return Err(CliError::config(
            "--budget-bytes and --bytes-per-scalar must be positive",
        ));
    }
    let cfg = model_config(&args.model, err)?;
    let schedule = hwsched::emit_schedule(&cfg, args.bytes_per_scalar);
    let memory = hwsched::estimate_single_load_memory(&cfg, args.bytes_per_scalar, args.budget_bytes);
    let text = if args.model.csv {
        format!("{}\n{}", schedule.to_csv(), memory.to_csv())
    } else {
        format!("{}\n{}", schedule.to_text(), memory.to_text())
    };
    write!(out, "{text}").map_err(io_err)
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::Count(a) => cmd_count(a, out, err),
        Command::Schedule(a) => cmd_schedule(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}
