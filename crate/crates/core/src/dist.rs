//! Factorized Bernoulli distribution over binary structure vectors.
//!
//! A distribution is an ordered list of factors. An independent factor owns a
//! single bit; a shared-rate group owns `U` bits that are drawn independently
//! with one common probability. Bits are laid out factor by factor.
//!
//! The parameter update is the rank-based natural-gradient step
//! `θ ← θ + (η/λ) Σ u_i · ∇̃ ln p_θ(M_i)` followed by clamping into
//! `[1/d, 1 − 1/d]`, where `d` is the number of θ parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest number of θ parameters for which the clamp interval is non-degenerate.
pub const MIN_PARAMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    IndependentBit,
    SharedRateGroup,
}

/// One θ parameter and the bits it governs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    kind: FactorKind,
    group_size: usize,
}

impl FactorSpec {
    pub fn independent() -> Self {
        Self {
            kind: FactorKind::IndependentBit,
            group_size: 1,
        }
    }

    pub fn shared(group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::invalid("shared-rate group size must be >= 1"));
        }
        Ok(Self {
            kind: FactorKind::SharedRateGroup,
            group_size,
        })
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    fn is_valid(&self) -> bool {
        match self.kind {
            FactorKind::IndependentBit => self.group_size == 1,
            FactorKind::SharedRateGroup => self.group_size >= 1,
        }
    }
}

/// A binary structure vector `M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructureSample {
    bits: Vec<bool>,
}

impl StructureSample {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Builds a sample from 0/1 integers; any other value is rejected.
    pub fn from_u8(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::invalid(format!("structure bit must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn ones(len: usize) -> Self {
        Self::new(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Rank-based utilities in `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilityVector {
    values: Vec<i8>,
}

impl UtilityVector {
    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn abs_sum(&self) -> usize {
        self.values.iter().filter(|&&u| u != 0).count()
    }
}

/// Maps losses to utilities: the best `⌈λ/4⌉` get +1, the worst `⌈λ/4⌉` get −1.
///
/// Ranking is a stable ascending sort, so equal losses are ordered by sample
/// index with the earlier sample ranked better.
pub fn rank_utilities(losses: &[f64]) -> Result<UtilityVector> {
    let lambda = losses.len();
    if lambda < 2 {
        return Err(Error::invalid(format!("need at least 2 losses to rank, got {lambda}")));
    }
    if let Some((i, l)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::invalid(format!("loss {i} is not finite ({l})")));
    }

    let mut order: Vec<usize> = (0..lambda).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));

    let quarter = lambda.div_ceil(4);
    let mut values = vec![0i8; lambda];
    for &i in &order[..quarter] {
        values[i] = 1;
    }
    for &i in &order[lambda - quarter..] {
        values[i] = -1;
    }
    Ok(UtilityVector { values })
}

/// Bernoulli law over structure bits with independent and shared-rate factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedBernoulli {
    factors: Vec<FactorSpec>,
    theta: Vec<f64>,
}

impl FactorizedBernoulli {
    /// Every factor starts at `theta_init`, clamped into the admissible range.
    pub fn new(factors: Vec<FactorSpec>, theta_init: f64) -> Result<Self> {
        if !(theta_init > 0.0 && theta_init < 1.0) {
            return Err(Error::invalid(format!("theta_init must lie in (0, 1), got {theta_init}")));
        }
        let theta = vec![theta_init; factors.len()];
        Self::with_theta(factors, theta)
    }

    pub fn with_theta(factors: Vec<FactorSpec>, theta: Vec<f64>) -> Result<Self> {
        let dist = Self { factors, theta };
        dist.check_layout()?;
        if let Some(t) = dist.theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("theta entries must be finite, got {t}")));
        }
        let (lo, hi) = dist.clamp_bounds();
        let theta = dist.theta.iter().map(|t| t.clamp(lo, hi)).collect();
        Ok(Self { theta, ..dist })
    }

    /// Layout of `n` independent bits.
    pub fn independent(n: usize, theta_init: f64) -> Result<Self> {
        Self::new(vec![FactorSpec::independent(); n], theta_init)
    }

    fn check_layout(&self) -> Result<()> {
        if self.factors.len() < MIN_PARAMS {
            return Err(Error::invalid(format!(
                "a distribution needs at least {MIN_PARAMS} theta parameters, got {}",
                self.factors.len()
            )));
        }
        if self.theta.len() != self.factors.len() {
            return Err(Error::invalid(format!(
                "theta has {} entries for {} factors",
                self.theta.len(),
                self.factors.len()
            )));
        }
        if let Some(f) = self.factors.iter().find(|f| !f.is_valid()) {
            return Err(Error::invalid(format!("invalid factor {f:?}")));
        }
        Ok(())
    }

    /// Re-checks every invariant; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.check_layout()?;
        let (lo, hi) = self.clamp_bounds();
        match self.theta.iter().find(|&&t| !(lo..=hi).contains(&t)) {
            Some(t) => Err(Error::invalid(format!("theta {t} outside [{lo}, {hi}]"))),
            None => Ok(()),
        }
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Number of θ parameters.
    pub fn d_param(&self) -> usize {
        self.factors.len()
    }

    /// Length of a structure vector drawn from this distribution.
    pub fn bit_len(&self) -> usize {
        self.factors.iter().map(|f| f.group_size).sum()
    }

    pub fn clamp_bounds(&self) -> (f64, f64) {
        let d = self.d_param() as f64;
        (1.0 / d, 1.0 - 1.0 / d)
    }

    pub fn theta_sum(&self) -> f64 {
        self.theta.iter().sum()
    }

    /// Iterates `(factor, theta, bit range)` in layout order.
    pub fn segments(&self) -> impl Iterator<Item = (&FactorSpec, f64, std::ops::Range<usize>)> + '_ {
        let mut start = 0;
        self.factors.iter().zip(&self.theta).map(move |(f, &t)| {
            let range = start..start + f.group_size;
            start = range.end;
            (f, t, range)
        })
    }

    /// Expected number of 1-bits, `Σ_k U_k θ_k`.
    pub fn expected_ones(&self) -> f64 {
        self.segments().map(|(f, t, _)| f.group_size as f64 * t).sum()
    }

    fn check_sample(&self, m: &StructureSample) -> Result<()> {
        if m.len() != self.bit_len() {
            return Err(Error::invalid(format!(
                "structure has {} bits, distribution expects {}",
                m.len(),
                self.bit_len()
            )));
        }
        Ok(())
    }

    /// Draws one structure; each bit is an independent Bernoulli draw.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> StructureSample {
        let mut bits = Vec::with_capacity(self.bit_len());
        for (f, t, _) in self.segments() {
            for _ in 0..f.group_size {
                bits.push(rng.random::<f64>() < t);
            }
        }
        StructureSample::new(bits)
    }

    /// Draws `count >= 2` independent structures.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<StructureSample>> {
        if count < 2 {
            return Err(Error::invalid(format!("sample count must be >= 2, got {count}")));
        }
        Ok((0..count).map(|_| self.sample_one(rng)).collect())
    }

    pub fn log_likelihood(&self, m: &StructureSample) -> Result<f64> {
        self.check_sample(m)?;
        let mut ll = 0.0;
        for (_, t, range) in self.segments() {
            for i in range {
                ll += if m.get(i) { t.ln() } else { (1.0 - t).ln() };
            }
        }
        Ok(ll)
    }

    /// Natural gradient of `ln p_θ(M)`: `m − θ` per independent bit and
    /// `mean(m_group) − θ` per shared-rate group.
    pub fn natural_grad_loglik(&self, m: &StructureSample) -> Result<Vec<f64>> {
        self.check_sample(m)?;
        Ok(self
            .segments()
            .map(|(f, t, range)| {
                let ones = m.bits()[range].iter().filter(|&&b| b).count();
                ones as f64 / f.group_size as f64 - t
            })
            .collect())
    }

    /// Diagonal of the Fisher information: `U / (θ(1 − θ))` per factor.
    pub fn fisher_diagonal(&self) -> Vec<f64> {
        self.segments()
            .map(|(f, t, _)| f.group_size as f64 / (t * (1.0 - t)))
            .collect()
    }

    /// `η_θ = 1 / (d · Σ|u_i|)`.
    pub fn theta_learning_rate(&self, u: &UtilityVector) -> Result<f64> {
        let abs_sum = u.abs_sum();
        if abs_sum == 0 {
            return Err(Error::invalid("utilities are all zero"));
        }
        Ok(1.0 / (self.d_param() as f64 * abs_sum as f64))
    }

    /// Returns the distribution after one utility-weighted natural-gradient step.
    pub fn update_theta(&self, samples: &[StructureSample], u: &UtilityVector) -> Result<Self> {
        if samples.len() != u.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} utilities",
                samples.len(),
                u.len()
            )));
        }
        let eta = self.theta_learning_rate(u)?;
        let lambda = samples.len() as f64;

        let mut step = vec![0.0; self.d_param()];
        for (m, &ui) in samples.iter().zip(u.values()) {
            if ui == 0 {
                continue;
            }
            let g = self.natural_grad_loglik(m)?;
            for (s, gk) in step.iter_mut().zip(g) {
                *s += f64::from(ui) * gk;
            }
        }

        let (lo, hi) = self.clamp_bounds();
        let theta = self
            .theta
            .iter()
            .zip(&step)
            .map(|(&t, &s)| (t + eta / lambda * s).clamp(lo, hi))
            .collect();
        Ok(Self {
            factors: self.factors.clone(),
            theta,
        })
    }

    /// Thresholds θ at 0.5; every bit of a group takes the group's value.
    pub fn deterministic_mode(&self) -> StructureSample {
        let mut bits = Vec::with_capacity(self.bit_len());
        for (f, t, _) in self.segments() {
            bits.extend(std::iter::repeat_n(t >= 0.5, f.group_size));
        }
        StructureSample::new(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn indep(theta: &[f64]) -> FactorizedBernoulli {
        FactorizedBernoulli::with_theta(vec![FactorSpec::independent(); theta.len()], theta.to_vec()).unwrap()
    }

    fn bits(b: &[u8]) -> StructureSample {
        StructureSample::from_u8(b).unwrap()
    }

    #[test]
    fn rejects_small_or_bad_layouts() {
        assert!(FactorizedBernoulli::independent(1, 0.5).is_err());
        assert!(FactorizedBernoulli::independent(2, 0.5).is_err());
        assert!(FactorizedBernoulli::independent(3, 0.5).is_ok());
        assert!(FactorizedBernoulli::independent(3, 1.0).is_err());
        assert!(FactorizedBernoulli::independent(3, 0.0).is_err());
        assert!(FactorSpec::shared(0).is_err());
        assert!(StructureSample::from_u8(&[0, 2]).is_err());
    }

    #[test]
    fn initial_theta_is_clamped() {
        let d = FactorizedBernoulli::independent(31, 0.99).unwrap();
        assert!(d.theta().iter().all(|&t| t == 1.0 - 1.0 / 31.0));
    }

    #[test]
    fn sample_count_must_be_at_least_two() {
        let d = FactorizedBernoulli::independent(3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(d.sample(&mut rng, 1).is_err());
        assert_eq!(d.sample(&mut rng, 2).unwrap().len(), 2);
    }

    #[test]
    fn fair_bit_frequency() {
        // d_param must be >= 3; the first factor is the one under test.
        let d = FactorizedBernoulli::independent(3, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let ones = d
            .sample(&mut rng, n)
            .unwrap()
            .iter()
            .filter(|m| m.get(0))
            .count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn shared_group_bits_vary_within_sample() {
        let d = FactorizedBernoulli::with_theta(
            vec![FactorSpec::shared(3).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = d.sample(&mut rng, 200).unwrap();
        let mixed = samples
            .iter()
            .filter(|m| {
                let g = &m.bits()[0..3];
                g.iter().any(|&b| b) && g.iter().any(|&b| !b)
            })
            .count();
        assert!(mixed > 0);
    }

    #[test]
    fn upper_clamp_mostly_ones() {
        let d = FactorizedBernoulli::independent(31, 0.999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = d.sample(&mut rng, 50).unwrap();
        let ones: usize = samples.iter().map(|m| m.count_ones()).sum();
        // expected fraction of ones is 30/31
        let frac = ones as f64 / (31.0 * 50.0);
        assert!(frac > 0.93, "{frac}");
    }

    #[test]
    fn log_likelihood_examples() {
        let d = indep(&[0.5, 0.5, 0.5]);
        let ll = d.log_likelihood(&bits(&[1, 0, 1])).unwrap();
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-15);

        let d = FactorizedBernoulli::with_theta(
            vec![FactorSpec::shared(2).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
            vec![0.4, 0.5, 0.5],
        )
        .unwrap();
        let ll = d.log_likelihood(&bits(&[1, 0, 1, 1])).unwrap();
        let expected = 0.4f64.ln() + 0.6f64.ln() + 2.0 * 0.5f64.ln();
        assert!((ll - expected).abs() < 1e-14);

        assert!(d.log_likelihood(&bits(&[1, 0, 1])).is_err());
    }

    #[test]
    fn natural_gradient_examples() {
        let d = indep(&[0.5, 0.5, 0.5]);
        assert_eq!(d.natural_grad_loglik(&bits(&[1, 0, 1])).unwrap(), vec![0.5, -0.5, 0.5]);

        let d = FactorizedBernoulli::with_theta(
            vec![FactorSpec::shared(4).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
            vec![0.4, 0.5, 0.5],
        )
        .unwrap();
        let g = d.natural_grad_loglik(&bits(&[1, 1, 1, 0, 0, 0])).unwrap();
        assert!((g[0] - 0.35).abs() < 1e-15);
        assert_eq!(&g[1..], &[-0.5, -0.5]);
        assert!(d.natural_grad_loglik(&bits(&[1])).is_err());
    }

    #[test]
    fn fisher_examples() {
        let d = FactorizedBernoulli::with_theta(
            vec![FactorSpec::independent(), FactorSpec::shared(4).unwrap(), FactorSpec::independent()],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        assert_eq!(d.fisher_diagonal(), vec![4.0, 16.0, 4.0]);
    }

    #[test]
    fn rank_utilities_examples() {
        let u = rank_utilities(&[0.1, 0.5, 0.2, 0.9]).unwrap();
        assert_eq!(u.values(), &[1, 0, 0, -1]);

        let u = rank_utilities(&[0.3, 0.3]).unwrap();
        assert_eq!(u.values(), &[1, -1]);

        let u = rank_utilities(&[5.0, 1.0, 7.0, 3.0, 2.0, 8.0, 6.0, 4.0]).unwrap();
        assert_eq!(u.values().iter().filter(|&&v| v == 1).count(), 2);
        assert_eq!(u.values().iter().filter(|&&v| v == -1).count(), 2);
        assert_eq!(u.values().iter().map(|&v| i32::from(v)).sum::<i32>(), 0);
        assert_eq!(u.values(), &[0, 1, -1, 0, 1, -1, 0, 0]);

        assert!(rank_utilities(&[1.0]).is_err());
        assert!(rank_utilities(&[1.0, f64::NAN]).is_err());
        assert!(rank_utilities(&[f64::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn learning_rate_examples() {
        let d = FactorizedBernoulli::independent(31, 0.5).unwrap();
        let u = rank_utilities(&[0.0, 1.0]).unwrap();
        assert_eq!(d.theta_learning_rate(&u).unwrap(), 1.0 / 62.0);

        let d = FactorizedBernoulli::independent(4, 0.5).unwrap();
        let u = rank_utilities(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(d.theta_learning_rate(&u).unwrap(), 1.0 / 16.0);

        let zero = UtilityVector { values: vec![0, 0] };
        assert!(d.theta_learning_rate(&zero).is_err());
    }

    #[test]
    fn update_hand_example() {
        let d = FactorizedBernoulli::independent(4, 0.5).unwrap();
        let samples = vec![bits(&[1, 1, 0, 0]), bits(&[0, 0, 0, 0])];
        let u = rank_utilities(&[0.0, 1.0]).unwrap();
        let next = d.update_theta(&samples, &u).unwrap();
        assert_eq!(next.theta(), &[0.5625, 0.5625, 0.5, 0.5]);
        // input is untouched
        assert_eq!(d.theta(), &[0.5; 4]);
    }

    #[test]
    fn identical_samples_cancel() {
        let d = indep(&[0.3, 0.6, 0.5, 0.7]);
        let m = bits(&[1, 0, 1, 1]);
        let u = rank_utilities(&[0.0, 1.0]).unwrap();
        let next = d.update_theta(&[m.clone(), m], &u).unwrap();
        assert_eq!(next.theta(), d.theta());
    }

    #[test]
    fn update_clamps_at_boundary() {
        let hi = 1.0 - 1.0 / 31.0;
        let d = FactorizedBernoulli::independent(31, hi).unwrap();
        let samples = vec![StructureSample::ones(31), StructureSample::zeros(31)];
        let u = rank_utilities(&[0.0, 1.0]).unwrap();
        let next = d.update_theta(&samples, &u).unwrap();
        assert!(next.theta().iter().all(|&t| t == hi));
        assert!((hi - 0.968).abs() < 1e-3);
    }

    #[test]
    fn update_rejects_length_mismatch() {
        let d = FactorizedBernoulli::independent(3, 0.5).unwrap();
        let u = rank_utilities(&[0.0, 1.0]).unwrap();
        assert!(d.update_theta(&[StructureSample::ones(3)], &u).is_err());
    }

    #[test]
    fn deterministic_mode_examples() {
        let d = indep(&[0.49, 0.5, 0.51]);
        assert_eq!(d.deterministic_mode(), bits(&[0, 1, 1]));

        let d = FactorizedBernoulli::with_theta(
            vec![FactorSpec::shared(3).unwrap(), FactorSpec::independent(), FactorSpec::independent()],
            vec![0.4, 0.6, 0.5],
        )
        .unwrap();
        assert_eq!(d.deterministic_mode(), bits(&[0, 0, 0, 1, 1]));

        let d = FactorizedBernoulli::independent(5, 0.01).unwrap();
        assert_eq!(d.deterministic_mode(), StructureSample::zeros(5));
    }
}
