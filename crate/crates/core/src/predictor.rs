//! Class-probability prediction from a trained network and distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dist::{FactorizedBernoulli, StructureSample};
use crate::models::{GatedModel, Network};
use crate::nn::{softmax, Matrix};
use crate::{Error, Result};

/// Rows per forward pass during evaluation.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// A single pass with the most probable structure.
    Deterministic,
    /// Softmax averaged over sampled structures.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    #[serde(default = "default_mode")]
    pub mode: PredictionMode,
    #[serde(default = "default_samples")]
    pub num_samples: usize,
}

fn default_mode() -> PredictionMode {
    PredictionMode::Deterministic
}

fn default_samples() -> usize {
    100
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            num_samples: default_samples(),
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("prediction.num_samples", "must be >= 1"));
        }
        Ok(())
    }
}

fn check_dist(net: &Network, dist: Option<&FactorizedBernoulli>) -> Result<()> {
    let bits = dist.map_or(0, FactorizedBernoulli::bit_len);
    if bits != net.bit_len() {
        return Err(Error::invalid(format!(
            "network consumes {} bits, distribution provides {bits}",
            net.bit_len()
        )));
    }
    Ok(())
}

/// Adds the softmax outputs under each mask, in mask order, into `out`.
fn probs_chunked(net: &Network, x: &Matrix, masks: &[StructureSample], out: &mut Matrix) -> Result<()> {
    let mut start = 0;
    while start < x.rows() {
        let end = (start + CHUNK).min(x.rows());
        let xs = x.slice_rows(start, end);
        for m in masks {
            let p = softmax(&net.logits(&xs, m)?);
            for r in 0..p.rows() {
                for (acc, v) in out.row_mut(start + r).iter_mut().zip(p.row(r)) {
                    *acc += v;
                }
            }
        }
        start = end;
    }
    Ok(())
}

/// Softmax of the network under the mode structure `θ ≥ 0.5`.
pub fn predict_deterministic(net: &Network, dist: Option<&FactorizedBernoulli>, x: &Matrix) -> Result<Matrix> {
    check_dist(net, dist)?;
    let m = dist.map_or_else(|| StructureSample::zeros(0), FactorizedBernoulli::deterministic_mode);
    let mut probs = Matrix::zeros(x.rows(), net.num_classes());
    probs_chunked(net, x, std::slice::from_ref(&m), &mut probs)?;
    Ok(probs)
}

/// Mean softmax over `num_samples` structures drawn from `dist`. The same
/// structures are used for every row of `x`.
pub fn predict_stochastic<R: Rng + ?Sized>(
    net: &Network,
    dist: Option<&FactorizedBernoulli>,
    x: &Matrix,
    num_samples: usize,
    rng: &mut R,
) -> Result<Matrix> {
    check_dist(net, dist)?;
    if num_samples == 0 {
        return Err(Error::invalid("stochastic prediction needs at least one sample"));
    }
    let Some(dist) = dist else {
        return predict_deterministic(net, None, x);
    };
    let masks: Vec<StructureSample> = (0..num_samples).map(|_| dist.sample_one(rng)).collect();
    let mut probs = Matrix::zeros(x.rows(), net.num_classes());
    probs_chunked(net, x, &masks, &mut probs)?;
    probs.scale(1.0 / num_samples as f64);
    Ok(probs)
}

/// Percentage of rows whose arg-max class (lowest index on ties) differs
/// from the label.
pub fn test_error(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot compute the error of an empty set"));
    }
    let wrong = probs
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

/// Test error (%) of `net` on `data` in the given mode.
pub fn evaluate<R: Rng + ?Sized>(
    net: &Network,
    dist: Option<&FactorizedBernoulli>,
    data: &Dataset,
    mode: PredictionMode,
    num_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let probs = match mode {
        PredictionMode::Deterministic => predict_deterministic(net, dist, data.features())?,
        PredictionMode::Stochastic => predict_stochastic(net, dist, data.features(), num_samples, rng)?,
    };
    test_error(&probs, data.labels())
}
