//! Config-driven experiment runner: training, metrics, checkpoints, evaluation.

mod checkpoint;
mod config;
mod metrics;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{apply_override, ArchitectureConfig, DataConfig, Experiment, ExperimentConfig, GatedKind};
pub use metrics::{
    export_history, read_metrics, read_series, MetricsWriter, ERROR_SERIES_HEADER, METRICS_HEADER,
    THETA_SERIES_HEADER,
};

use crate::data::Dataset;
use crate::models::GatedModel;
use crate::predictor::PredictionMode;
use crate::trainer::{self, TrainState};
use crate::{predictor, Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.toml";

/// Sizes the global rayon pool; 1 gives the single-threaded reference mode.
/// Results do not depend on the thread count.
pub fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::invalid("--threads must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Final state and test errors of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub state: TrainState,
    pub test_error_det: f64,
    pub test_error_stoch: f64,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let s = &self.state;
        let name = toml::Value::try_from(self.experiment)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let mut out = String::new();
        let _ = writeln!(out, "experiment             {name}");
        let _ = writeln!(out, "network                {}", s.network.kind_name());
        let _ = writeln!(out, "iterations             {}", s.iteration);
        let _ = writeln!(out, "epochs                 {}", s.epoch);
        let _ = writeln!(out, "skipped_steps          {}", s.skipped_steps);
        let _ = writeln!(out, "test_error_det         {:.4}", self.test_error_det);
        let _ = writeln!(out, "test_error_stoch       {:.4}", self.test_error_stoch);
        if let Some(d) = &s.dist {
            let t = d.theta();
            let min = t.iter().copied().fold(f64::INFINITY, f64::min);
            let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(out, "theta_dim              {}", t.len());
            let _ = writeln!(out, "theta_sum              {:.6}", d.theta_sum());
            let _ = writeln!(out, "theta_min              {min:.6}");
            let _ = writeln!(out, "theta_max              {max:.6}");
            let _ = writeln!(out, "expected_active_count  {:.6}", s.network.expected_active(t));
        }
        out
    }
}

/// Loads the configured data and runs.
pub fn run(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    let (train, test) = cfg.load_data()?;
    run_with_data(cfg, &train, &test, resume)
}

/// Trains per `cfg` on the given data, writing `metrics.csv`,
/// `checkpoint.bin`, `summary.txt` and `config.toml` into `cfg.out_dir`.
/// With `resume`, continues from a checkpoint of the same configuration and
/// appends to the existing metrics.
pub fn run_with_data(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, resume: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let tcfg = cfg.effective_train();
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut state = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_hash != cfg.resume_hash()? {
                return Err(Error::Incompatible(format!(
                    "{} was written by a different configuration",
                    path.display()
                )));
            }
            ck.state
        }
        None => {
            let (net, rng) = cfg.init_network(train)?;
            TrainState::new(net, &tcfg, train.len(), rng)?
        }
    };
    if state.network.input_dim() != train.dim() || state.network.num_classes() != train.num_classes() {
        return Err(Error::invalid("dataset shape does not match the network"));
    }

    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml_string()?).map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;
    let mut writer = MetricsWriter::open(&out.join(METRICS_FILE), resume.is_some())?;
    let start = Instant::now();
    let wall = cfg.wall_clock;
    trainer::run_training(&mut state, &tcfg, train, Some(test), &cfg.prediction, |rec| {
        if wall {
            rec.wall_time_s = start.elapsed().as_secs_f64();
        }
        writer.write(rec)
    })?;

    Checkpoint::new(cfg.clone(), state.clone())?.save(&out.join(CHECKPOINT_FILE))?;
    let mut rng = trainer::eval_rng(tcfg.seed, state.epoch);
    let (det, stoch) = trainer::evaluate_both(&state, test, &cfg.prediction, &mut rng)?;
    let summary = RunSummary {
        experiment: cfg.experiment,
        state,
        test_error_det: det,
        test_error_stoch: stoch,
        out_dir: out.clone(),
    };
    std::fs::write(out.join(SUMMARY_FILE), summary.render()).map_err(|e| Error::io(out.join(SUMMARY_FILE), e))?;
    Ok(summary)
}

/// Which part of the configured data to evaluate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Error (%) of a checkpoint on its configured data. The stochastic-mode
/// seed defaults to the run seed.
pub fn eval(checkpoint: &Path, split: Split, mode: PredictionMode, num_samples: usize, seed: Option<u64>) -> Result<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let seed = seed.unwrap_or(ck.config.train.seed);
    let (train, test) = ck.config.load_data()?;
    let data = match split {
        Split::Train => &train,
        Split::Test => &test,
    };
    eval_state(&ck.state, data, mode, num_samples, seed)
}

pub fn eval_state(state: &TrainState, data: &Dataset, mode: PredictionMode, num_samples: usize, seed: u64) -> Result<f64> {
    if num_samples == 0 {
        return Err(Error::invalid("num_samples must be >= 1"));
    }
    let mut rng = trainer::eval_rng(seed, state.epoch);
    predictor::evaluate(&state.network, state.dist.as_ref(), data, mode, num_samples, &mut rng)
}
