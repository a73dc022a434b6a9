//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid flags, 1 for I/O or data
//! failures. Failures are also reported on stderr as one JSON object.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::analysis::{self, SweepPolicy};
use crate::ensembler::{ensemble_batch, EnsembleConfig, DEFAULT_MAX_PREDICTIONS};
use crate::error::Error;
use crate::io::atomic_write;
use crate::mlp::{self, MlpModel, TrainConfig};
use crate::prediction_source::{interleave_networks, read_log, write_log};
use crate::termination::TerminationPolicy;

#[derive(Debug, Parser)]
#[command(name = "adaptive-ensemble", version, propagate_version = true)]
#[command(about = "Adaptive ensemble prediction with confidence-level early termination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic 2-D dataset as CSV (x,y,label).
    GenData {
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a sigmoid MLP on a dataset CSV and save it as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        hidden: u64,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value_t = mlp::DEFAULT_LEARNING_RATE, value_parser = positive_real)]
        lr: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a prediction log with one prediction per model for every sample.
    PredictLog {
        /// Comma-separated model files; their order is the prediction order.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge per-network logs, alternating networks within each variant.
    Interleave {
        #[arg(long, value_delimiter = ',', required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a prediction log through the adaptive ensembler.
    Run {
        #[arg(long)]
        log: PathBuf,
        /// never | static:<T> | cl:<conf>[:<first>] | pairwise:<conf>[:<first>]
        #[arg(long, default_value = "cl:0.95")]
        policy: TerminationPolicy,
        #[arg(long, default_value_t = DEFAULT_MAX_PREDICTIONS as u64, value_parser = clap::value_parser!(u64).range(1..))]
        max_preds: u64,
        /// Per-record results (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Also write the summary JSON here; it is always printed to stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Percentile-bucket report (CSV).
    Buckets {
        #[arg(long)]
        log: PathBuf,
        /// Predictions averaged for the "after" error rate.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        after: u64,
        #[arg(long, default_value_t = analysis::DEFAULT_BUCKETS as u64, value_parser = clap::value_parser!(u64).range(1..))]
        buckets: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cost/accuracy sweep over fixed ensemble sizes and adaptive policies (CSV).
    Sweep {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_PREDICTIONS as u64, value_parser = clap::value_parser!(u64).range(1..))]
        max_preds: u64,
        /// Adaptive policies to add after fixed sizes 1..=N; defaults to
        /// static thresholds 0.5..0.999 and cl:0.9, cl:0.95, cl:0.99.
        #[arg(long, value_delimiter = ',')]
        policies: Vec<TerminationPolicy>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn positive_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a positive finite number"))
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Domain(_) => "usage",
            _ if e.is_io() => "io",
            _ => "data",
        };
        Failure {
            code: if kind == "usage" { 2 } else { 1 },
            kind,
            message: e.to_string(),
        }
    }
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            return report(&Failure {
                code: 2,
                kind: "usage",
                message: e.to_string().trim().to_owned(),
            });
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => report(&f),
    }
}

fn report(f: &Failure) -> i32 {
    let line = json!({ "error": f.message, "kind": f.kind, "exit_code": f.code });
    let _ = writeln!(std::io::stderr(), "{line}");
    f.code
}

fn with_path(path: &Path, e: Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { n, seed, out } => {
            let data = mlp::generate_dataset(n as usize, seed)?;
            mlp::write_dataset_csv(&data, &out).map_err(|e| with_path(&out, e))?;
        }
        Command::Train {
            data,
            hidden,
            epochs,
            lr,
            seed,
            out,
        } => {
            let samples = mlp::read_dataset_csv(&data).map_err(|e| with_path(&data, e))?;
            let cfg = TrainConfig::new(hidden as usize, seed)
                .with_epochs(epochs as usize)
                .with_learning_rate(lr);
            let (model, _) = mlp::train(&samples, &cfg)?;
            model.save(&out).map_err(|e| with_path(&out, e))?;
        }
        Command::PredictLog { models, data, out } => {
            let models = models
                .iter()
                .map(|p| MlpModel::load(p).map_err(|e| with_path(p, e)))
                .collect::<Result<Vec<_>, _>>()?;
            let samples = mlp::read_dataset_csv(&data).map_err(|e| with_path(&data, e))?;
            mlp::emit_prediction_log(&models, &samples, &out).map_err(|e| with_path(&out, e))?;
        }
        Command::Interleave { logs, out } => {
            let logs = logs
                .iter()
                .map(|p| read_log(p).map_err(|e| with_path(p, e)))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = interleave_networks(&logs)?;
            write_log(&merged, &out).map_err(|e| with_path(&out, e))?;
        }
        Command::Run {
            log,
            policy,
            max_preds,
            out,
            summary,
        } => {
            let records = read_log(&log).map_err(|e| with_path(&log, e))?;
            records.num_classes().map_err(|e| with_path(&log, e))?;
            let cfg = EnsembleConfig::new(max_preds as usize, policy)?;
            let outcome = ensemble_batch(&records.records, &cfg)?;
            atomic_write(&out, |w| {
                for r in &outcome.results {
                    serde_json::to_writer(&mut *w, r)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })
            .map_err(|e| with_path(&out, e))?;
            let text = serde_json::to_string_pretty(&outcome.summary).map_err(Error::from)?;
            if let Some(path) = summary {
                atomic_write(&path, |w| {
                    w.write_all(text.as_bytes())?;
                    w.write_all(b"\n")?;
                    Ok(())
                })
                .map_err(|e| with_path(&path, e))?;
            }
            println!("{text}");
        }
        Command::Buckets {
            log,
            after,
            buckets,
            out,
        } => {
            let records = read_log(&log).map_err(|e| with_path(&log, e))?;
            let report = analysis::bucket_analysis(&records, after as usize, buckets as usize)?;
            analysis::write_buckets_csv(&report, &out).map_err(|e| with_path(&out, e))?;
        }
        Command::Sweep {
            log,
            max_preds,
            policies,
            out,
        } => {
            let records = read_log(&log).map_err(|e| with_path(&log, e))?;
            let n = max_preds as usize;
            let legs = if policies.is_empty() {
                SweepPolicy::standard_grid(n)
            } else {
                (1..=n)
                    .map(SweepPolicy::Fixed)
                    .chain(policies.into_iter().map(SweepPolicy::Adaptive))
                    .collect()
            };
            let points = analysis::sweep(&records, &legs, n)?;
            analysis::write_sweep_csv(&points, &out).map_err(|e| with_path(&out, e))?;
        }
    }
    Ok(())
}
