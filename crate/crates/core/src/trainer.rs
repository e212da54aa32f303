//! Joint training of weights and structure distribution.
//!
//! One step: draw λ structures from the current distribution, score each on
//! the mini-batch (shared or split), move the weights along the averaged
//! gradient with Nesterov SGD, and move θ along the rank-based natural
//! gradient computed from the same losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchIterator, Dataset};
use crate::dist::{rank_utilities, FactorizedBernoulli, StructureSample};
use crate::models::{GatedModel, Network};
use crate::nn::{LayerGrad, SgdState};
use crate::predictor::{self, PredictionConfig, PredictionMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Every structure is scored on the whole mini-batch.
    SameMinibatch,
    /// The mini-batch is cut into λ contiguous parts, one per structure.
    SplitMinibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss_mode: LossMode,
    pub theta_init: f64,
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate on the test set every this many epochs; 0 disables.
    #[serde(default = "one")]
    pub eval_interval: usize,
    /// Emit a metrics row every this many iterations; 0 logs epoch ends only.
    #[serde(default)]
    pub log_interval: usize,
    /// When false, θ stays at its initial value (fixed-probability baseline).
    #[serde(default = "yes")]
    pub adapt_theta: bool,
    /// Optional early stop after this many iterations in total.
    #[serde(default)]
    pub max_iterations: Option<u64>,
}

fn default_momentum() -> f64 {
    crate::nn::DEFAULT_MOMENTUM
}

fn default_weight_decay() -> f64 {
    crate::nn::DEFAULT_WEIGHT_DECAY
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 2,
            batch_size: 64,
            max_epochs: 100,
            loss_mode: LossMode::SameMinibatch,
            theta_init: 0.5,
            base_lr: 0.01,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            seed: 0,
            eval_interval: 1,
            log_interval: 0,
            adapt_theta: true,
            max_iterations: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 2 {
            return Err(Error::config("train.lambda", format!("must be >= 2, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.loss_mode == LossMode::SplitMinibatch && self.batch_size % self.lambda != 0 {
            return Err(Error::config(
                "train.batch_size",
                format!(
                    "split-minibatch needs batch_size divisible by lambda ({} % {} != 0)",
                    self.batch_size, self.lambda
                ),
            ));
        }
        if !(self.theta_init > 0.0 && self.theta_init < 1.0) {
            return Err(Error::config("train.theta_init", format!("must lie in (0, 1), got {}", self.theta_init)));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::config("train.base_lr", "must be finite and >= 0"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Loss and weight gradients of one structure on its share of the batch.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub loss: f64,
    pub grads: Vec<LayerGrad>,
}

/// Scores every structure on the full batch: `L̄_i = (1/N) Σ_z l(z, W, M_i)`.
pub fn loss_same_minibatch(net: &Network, samples: &[StructureSample], batch: &Batch) -> Result<Vec<SampleEval>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty mini-batch"));
    }
    samples
        .par_iter()
        .map(|m| {
            let (loss, grads) = net.loss_and_grad(&batch.x, &batch.labels, m)?;
            Ok(SampleEval { loss, grads })
        })
        .collect()
}

/// Scores structure `i` on the `i`-th contiguous block of `N/λ` examples:
/// `L̄_i = (λ/N) Σ_{z∈Z_i} l(z, W, M_i)`.
pub fn loss_split_minibatch(net: &Network, samples: &[StructureSample], batch: &Batch) -> Result<Vec<SampleEval>> {
    let lambda = samples.len();
    if batch.is_empty() || lambda == 0 || batch.len() % lambda != 0 {
        return Err(Error::invalid(format!(
            "batch of {} cannot be split into {lambda} equal parts",
            batch.len()
        )));
    }
    let part = batch.len() / lambda;
    samples
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let sub = batch.slice(i * part, (i + 1) * part);
            let (loss, grads) = net.loss_and_grad(&sub.x, &sub.labels, m)?;
            Ok(SampleEval { loss, grads })
        })
        .collect()
}

/// Arithmetic mean of per-structure gradients, accumulated in sample order.
pub fn weight_gradient_estimate(sets: &[Vec<LayerGrad>]) -> Result<Vec<LayerGrad>> {
    let first = sets.first().ok_or_else(|| Error::invalid("no gradient sets to average"))?;
    let mut mean = first.clone();
    for set in &sets[1..] {
        if set.len() != mean.len()
            || set
                .iter()
                .zip(&mean)
                .any(|(a, b)| a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len())
        {
            return Err(Error::invalid("gradient sets differ in shape"));
        }
        for (m, g) in mean.iter_mut().zip(set) {
            m.add_assign(g);
        }
    }
    let inv = 1.0 / sets.len() as f64;
    for g in &mut mean {
        g.scale(inv);
    }
    Ok(mean)
}

/// Weights, optimizer, distribution, counters and RNG: everything needed to
/// continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub network: Network,
    pub optimizer: SgdState,
    /// `None` for ungated networks.
    pub dist: Option<FactorizedBernoulli>,
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub batches: BatchIterator,
    pub in_epoch: bool,
    pub skipped_steps: u64,
    loss_sum: f64,
    loss_count: u64,
}

impl TrainState {
    /// `rng` should be the stream that initialized `network`, so a single
    /// seed determines the whole run.
    pub fn new(network: Network, cfg: &TrainConfig, train_len: usize, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        network.validate()?;
        let dist = if network.bit_len() == 0 {
            None
        } else {
            Some(FactorizedBernoulli::new(network.factor_layout(), cfg.theta_init)?)
        };
        let optimizer = SgdState::new(network.layers(), cfg.base_lr, cfg.momentum, cfg.weight_decay);
        Ok(Self {
            network,
            optimizer,
            dist,
            iteration: 0,
            epoch: 0,
            rng,
            batches: BatchIterator::new(train_len, cfg.batch_size)?,
            in_epoch: false,
            skipped_steps: 0,
            loss_sum: 0.0,
            loss_count: 0,
        })
    }

    /// Replaces the distribution, e.g. to start from non-uniform θ.
    pub fn with_dist(mut self, dist: FactorizedBernoulli) -> Result<Self> {
        if dist.bit_len() != self.network.bit_len() {
            return Err(Error::invalid(format!(
                "distribution has {} bits, network consumes {}",
                dist.bit_len(),
                self.network.bit_len()
            )));
        }
        self.dist = Some(dist);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if let Some(dist) = &self.dist {
            dist.validate()?;
            if dist.bit_len() != self.network.bit_len() {
                return Err(Error::invalid("distribution does not match the network"));
            }
        } else if self.network.bit_len() != 0 {
            return Err(Error::invalid("gated network without a distribution"));
        }
        if self.optimizer.velocity().len() != self.network.layers().len() {
            return Err(Error::invalid("optimizer does not match the network"));
        }
        Ok(())
    }
}

/// What happened in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub samples: Vec<StructureSample>,
    pub losses: Vec<f64>,
    pub skipped: bool,
}

/// One step with the cross-entropy evaluator selected by `cfg.loss_mode`.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch) -> Result<StepOutcome> {
    let mode = cfg.loss_mode;
    train_step_with(state, cfg, batch, |net, samples, batch| match mode {
        LossMode::SameMinibatch => loss_same_minibatch(net, samples, batch),
        LossMode::SplitMinibatch => loss_split_minibatch(net, samples, batch),
    })
}

/// One step with a caller-supplied evaluator producing λ losses and gradients.
pub fn train_step_with<F>(state: &mut TrainState, cfg: &TrainConfig, batch: &Batch, evaluate: F) -> Result<StepOutcome>
where
    F: FnOnce(&Network, &[StructureSample], &Batch) -> Result<Vec<SampleEval>>,
{
    let samples = match &state.dist {
        Some(dist) => dist.sample(&mut state.rng, cfg.lambda)?,
        None => vec![StructureSample::zeros(0)],
    };
    let evals = evaluate(&state.network, &samples, batch)?;
    if evals.len() != samples.len() {
        return Err(Error::invalid(format!(
            "evaluator returned {} results for {} samples",
            evals.len(),
            samples.len()
        )));
    }
    let losses: Vec<f64> = evals.iter().map(|e| e.loss).collect();

    let finite = losses.iter().all(|l| l.is_finite()) && evals.iter().all(|e| e.grads.iter().all(LayerGrad::is_finite));
    if !finite {
        state.skipped_steps += 1;
        state.iteration += 1;
        return Ok(StepOutcome {
            samples,
            losses,
            skipped: true,
        });
    }

    let sets: Vec<Vec<LayerGrad>> = evals.into_iter().map(|e| e.grads).collect();
    let grad = weight_gradient_estimate(&sets)?;
    state.optimizer.nesterov_step(state.network.layers_mut(), &grad)?;

    if cfg.adapt_theta {
        if let Some(dist) = &state.dist {
            let u = rank_utilities(&losses)?;
            state.dist = Some(dist.update_theta(&samples, &u)?);
        }
    }

    state.loss_sum += losses.iter().sum::<f64>() / losses.len() as f64;
    state.loss_count += 1;
    state.iteration += 1;
    Ok(StepOutcome {
        samples,
        losses,
        skipped: false,
    })
}

/// One row of training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub current_lr: f64,
    pub mean_sample_loss: Option<f64>,
    pub theta_sum: Option<f64>,
    pub theta_min: Option<f64>,
    pub theta_max: Option<f64>,
    pub expected_active_count: Option<f64>,
    pub test_error_det: Option<f64>,
    pub test_error_stoch: Option<f64>,
    pub skipped_steps: u64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    /// Snapshot of `state`; drains the running loss average.
    fn snapshot(state: &mut TrainState) -> Self {
        let mean_sample_loss = (state.loss_count > 0).then(|| state.loss_sum / state.loss_count as f64);
        state.loss_sum = 0.0;
        state.loss_count = 0;
        let theta = state.dist.as_ref().map(|d| d.theta());
        Self {
            iteration: state.iteration,
            epoch: state.epoch,
            current_lr: state.optimizer.current_lr,
            mean_sample_loss,
            theta_sum: theta.map(|t| t.iter().sum()),
            theta_min: theta.map(|t| t.iter().copied().fold(f64::INFINITY, f64::min)),
            theta_max: theta.map(|t| t.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            expected_active_count: theta.map(|t| state.network.expected_active(t)),
            test_error_det: None,
            test_error_stoch: None,
            skipped_steps: state.skipped_steps,
            wall_time_s: 0.0,
        }
    }
}

/// Test errors in both prediction modes.
pub fn evaluate_both(
    state: &TrainState,
    test: &Dataset,
    prediction: &PredictionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let det = predictor::evaluate(
        &state.network,
        state.dist.as_ref(),
        test,
        PredictionMode::Deterministic,
        prediction.num_samples,
        rng,
    )?;
    let stoch = predictor::evaluate(
        &state.network,
        state.dist.as_ref(),
        test,
        PredictionMode::Stochastic,
        prediction.num_samples,
        rng,
    )?;
    Ok((det, stoch))
}

/// RNG for the evaluation after `epoch`; independent of the training stream.
pub fn eval_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(epoch as u64);
    rng
}

/// Runs epochs until `max_epochs` (or `max_iterations`) is reached, emitting
/// metrics rows to `sink`. Can be called again on a restored state to resume.
///
/// Rows: one before the first step, one every `log_interval` iterations,
/// and one at every epoch end (with test errors when an evaluation is due).
pub fn run_training<S>(
    state: &mut TrainState,
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    prediction: &PredictionConfig,
    mut sink: S,
) -> Result<()>
where
    S: FnMut(&mut MetricsRecord) -> Result<()>,
{
    cfg.validate()?;
    if train.dim() != state.network.input_dim() {
        return Err(Error::invalid(format!(
            "training data has {} features, network expects {}",
            train.dim(),
            state.network.input_dim()
        )));
    }
    if cfg.max_epochs == 0 {
        return Ok(());
    }
    if state.iteration == 0 && !state.in_epoch && state.epoch == 0 {
        state.optimizer.set_epoch(0, cfg.max_epochs);
        sink(&mut MetricsRecord::snapshot(state))?;
    }

    loop {
        if state.in_epoch && state.batches.epoch_exhausted() {
            state.in_epoch = false;
            state.epoch += 1;
            let mut record = MetricsRecord::snapshot(state);
            let due = cfg.eval_interval > 0 && state.epoch % cfg.eval_interval == 0;
            if let (true, Some(test)) = (due, test) {
                let mut rng = eval_rng(cfg.seed, state.epoch);
                let (det, stoch) = evaluate_both(state, test, prediction, &mut rng)?;
                record.test_error_det = Some(det);
                record.test_error_stoch = Some(stoch);
            }
            sink(&mut record)?;
        }
        if state.epoch >= cfg.max_epochs {
            break;
        }
        if cfg.max_iterations.is_some_and(|max| state.iteration >= max) {
            break;
        }
        if !state.in_epoch {
            state.optimizer.set_epoch(state.epoch, cfg.max_epochs);
            state.batches.start_epoch(&mut state.rng);
            state.in_epoch = true;
        }

        let indices = state.batches.next_in_epoch().expect("fresh epoch has a batch").to_vec();
        let batch = train.gather(&indices);
        train_step(state, cfg, &batch)?;

        if cfg.log_interval > 0
            && state.iteration % cfg.log_interval as u64 == 0
            && !state.batches.epoch_exhausted()
        {
            sink(&mut MetricsRecord::snapshot(state))?;
        }
    }
    Ok(())
}
