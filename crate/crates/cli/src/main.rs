use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dynstruct::harness::{self, ExperimentConfig, Split};
use dynstruct::predictor::PredictionMode;

#[derive(Parser)]
#[command(name = "dynstruct", version, about = "Train networks with learned Bernoulli structure variables")]
struct Cli {
    /// Worker threads for per-sample evaluation (1 = reference mode).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `section.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report the error (%) of a checkpoint on its configured data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Deterministic)]
        mode: ModeArg,
        #[arg(long, default_value_t = 100)]
        num_samples: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Seed for stochastic prediction; defaults to the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write θ-sum and test-error series from a metrics file.
    ExportHistory {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory; defaults to the metrics file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    harness::init_threads(cli.threads)?;
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            mut overrides,
            resume,
        } => {
            if let Some(seed) = seed {
                overrides.push(format!("train.seed={seed}"));
            }
            if let Some(out) = out {
                overrides.push(format!("out_dir={}", toml_string(&out.to_string_lossy())));
            }
            let cfg = ExperimentConfig::load(&config, &overrides)
                .with_context(|| format!("loading {}", config.display()))?;
            let summary = harness::run(&cfg, resume.as_deref())?;
            print!("{}", summary.render());
            println!("output                 {}", summary.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            mode,
            num_samples,
            split,
            seed,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let mode = match mode {
                ModeArg::Deterministic => PredictionMode::Deterministic,
                ModeArg::Stochastic => PredictionMode::Stochastic,
            };
            let err = harness::eval(&checkpoint, split, mode, num_samples, seed)?;
            println!("{err:.4}");
        }
        Command::ExportHistory { metrics, out } => {
            let dir = out.unwrap_or_else(|| metrics.parent().map(PathBuf::from).unwrap_or_default());
            let (theta, err) = harness::export_history(&metrics, &dir)?;
            println!("{}", theta.display());
            println!("{}", err.display());
        }
    }
    Ok(())
}

/// Quotes `s` as a TOML basic string.
fn toml_string(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}
