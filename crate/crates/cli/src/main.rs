//! `rationale`: generate synthetic corpora, train and evaluate rationalizers,
//! tabulate exact loss landscapes and aggregate multi-seed reports.
//!
//! Exit status is 2 for configuration errors (reported before any work
//! starts) and 1 for failures during a run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rationale_core::criteria::Criterion;
use rationale_core::evaluation::RenderFormat;

use config::Overrides;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<rationale_core::Error> for Failure {
    fn from(e: rationale_core::Error) -> Self {
        match e {
            rationale_core::Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(name = "rationale", version, about = "Selective rationalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target selection rate in [0, 1].
    #[arg(long)]
    sparsity: Option<f64>,
    /// mmi, mmi+penalty or mrd.
    #[arg(long)]
    criterion: Option<Criterion>,
    /// Artifact directory (default: $RATIONALE_OUT_DIR/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            sparsity: self.sparsity,
            criterion: self.criterion,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic corpus from a causal spec.
    GenData(Common),
    /// Train an extractor/predictor pair for every configured seed.
    Train(Common),
    /// Evaluate a checkpoint on an annotated dataset.
    Eval(EvalArgs),
    /// Exact per-role losses for each criterion on a causal spec.
    Landscape(LandscapeArgs),
    /// Aggregate per-seed reports of one configuration.
    Report(ReportArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Annotated dataset to score.
    #[arg(long)]
    data: PathBuf,
    /// jsonl-spans or tsv.
    #[arg(long, default_value = "jsonl-spans")]
    format: rationale_core::corpus::DatasetFormat,
    /// Dataset id for the report (default: file stem).
    #[arg(long)]
    name: Option<String>,
    /// Also write highlighted rationales (ansi or html).
    #[arg(long)]
    render: Option<RenderFormat>,
    /// Number of examples to render.
    #[arg(long, default_value_t = 50)]
    render_limit: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Causal spec (TOML); overrides the config file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Criteria to tabulate (repeatable; default: all).
    #[arg(long)]
    criterion: Vec<Criterion>,
    /// Penalty weights for mmi+penalty (repeatable).
    #[arg(long)]
    lambda: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// `report.json` / `eval.json` files, or directories holding `report.json`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(c.config.as_deref(), &c.overrides()),
        Command::Train(c) => commands::train(c.config.as_deref(), &c.overrides()),
        Command::Eval(a) => commands::eval(&commands::EvalRequest {
            checkpoint: a.checkpoint,
            data: a.data,
            format: a.format,
            name: a.name,
            render: a.render,
            render_limit: a.render_limit,
            out: a.out,
        }),
        Command::Landscape(a) => commands::landscape(a.config.as_deref(), a.spec, &a.criterion, &a.lambda, a.out),
        Command::Report(a) => commands::report(&a.inputs, a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
