// SPDX-License-Identifier: MIT OR Apache-2.0

//! The KL change-point statistic and its simulated null distribution.
//!
//! The statistic for a new batch is the divergence between the posterior
//! before and after absorbing it,
//! `KL = ln E[L(θ)] − E[ln L(θ)]`, expectations under the current
//! posterior. For conjugate families it has the closed form
//! `ln c(n,S) − ln c(n',S') − ΔS·E[θ] + Δn·E[b(θ)]`; otherwise it is
//! estimated from posterior draws.
//!
//! The null distribution is simulated by drawing a parameter from the
//! current posterior, a pseudo-batch of the same length from the model at
//! that parameter, and evaluating the statistic of the pseudo-batch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expfam::{ConjugatePosterior, FamilyKind, FamilyParam, SufficientStats};
use crate::rng::{substream, StreamRng};
use crate::special::logsumexp;
use crate::stats::{mean, quantile_sorted};

/// Values this far below zero are accepted as rounding error and clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlTestConfig {
    /// Type-1 error probability.
    pub alpha: f64,
    /// Number of posterior draws and null replicates per step.
    pub m_draws: usize,
    pub seed: u64,
}

impl Default for KlTestConfig {
    fn default() -> Self {
        KlTestConfig { alpha: 0.05, m_draws: 1000, seed: 0 }
    }
}

impl KlTestConfig {
    pub fn new(alpha: f64, m_draws: usize, seed: u64) -> Result<Self> {
        let cfg = KlTestConfig { alpha, m_draws, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.m_draws < 2 {
            return Err(Error::Config(format!("need at least 2 Monte-Carlo draws, got {}", self.m_draws)));
        }
        Ok(())
    }
}

/// Outcome of one change-point test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDecision {
    pub statistic: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub lower: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub upper: f64,
    pub detected: bool,
    pub null_sample_size: usize,
    /// The statistic coincided with an end of the interval and the outcome
    /// was settled by the tie-breaking draw.
    #[serde(default)]
    pub boundary_tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ExactConjugateSampler,
    Mcmc,
}

/// Posterior draws used for Monte-Carlo statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraws<T> {
    pub draws: Vec<T>,
    pub provenance: Provenance,
}

impl<T> ParamDraws<T> {
    pub fn new(draws: Vec<T>, provenance: Provenance) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Config("empty set of parameter draws".into()));
        }
        Ok(ParamDraws { draws, provenance })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Draws `m` parameters from a conjugate posterior, draw `j` from the
/// substream `(seed, step, j)`.
pub fn exact_draws(post: &ConjugatePosterior, m: usize, seed: u64, step: u64) -> ParamDraws<FamilyParam> {
    let draws = (0..m as u64)
        .map(|j| post.sample_param(&mut substream(seed, &[step, j])))
        .collect();
    ParamDraws { draws, provenance: Provenance::ExactConjugateSampler }
}

/// Closed-form statistic with the current posterior's terms computed once.
#[derive(Debug, Clone)]
pub struct KlEvaluator {
    post: ConjugatePosterior,
    log_c: f64,
    mean_theta: [f64; 2],
    mean_b: f64,
}

impl KlEvaluator {
    pub fn new(post: &ConjugatePosterior) -> Result<Self> {
        let log_c = post.log_norm()?;
        let m = post.moments()?;
        let mean_theta = [m.mean_theta[0], m.mean_theta.get(1).copied().unwrap_or(0.0)];
        for (term, v) in [("E[theta]", mean_theta[0]), ("E[theta]", mean_theta[1]), ("E[b(theta)]", m.mean_b)] {
            if !v.is_finite() {
                return Err(Error::numeric(term, format!("{v} for {:?}", post.stats)));
            }
        }
        Ok(KlEvaluator { post: *post, log_c, mean_theta, mean_b: m.mean_b })
    }

    pub fn posterior(&self) -> &ConjugatePosterior {
        &self.post
    }

    /// KL statistic of a batch with sufficient statistics `data`.
    pub fn eval(&self, data: &SufficientStats) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let next = self.post.absorb(*data);
        next.validate()?;
        let log_c_next = next.log_norm_unchecked();
        if !log_c_next.is_finite() {
            return Err(Error::numeric("log normalizer of the updated posterior", format!("{log_c_next}")));
        }
        let linear = data.s1 * self.mean_theta[0] + data.s2 * self.mean_theta[1];
        let v = self.log_c - log_c_next - linear + data.n * self.mean_b;
        if !v.is_finite() {
            return Err(Error::numeric("KL statistic", format!("{v}")));
        }
        // cancellation error grows with the size of the terms being combined
        let scale = self.log_c.abs() + log_c_next.abs() + linear.abs() + (data.n * self.mean_b).abs();
        if v < 0.0 && v > -NEGATIVE_TOLERANCE.max(1e-14 * scale) {
            return Ok(0.0);
        }
        if v < 0.0 {
            return Err(Error::numeric("KL statistic", format!("negative value {v}")));
        }
        Ok(v)
    }
}

/// Closed-form KL statistic of a new batch against `post`.
pub fn kl_closed_form(post: &ConjugatePosterior, new_batch_stats: &SufficientStats) -> Result<f64> {
    KlEvaluator::new(post)?.eval(new_batch_stats)
}

/// Monte-Carlo KL statistic `ln mean(e^ℓ) − mean(ℓ)` with its standard error.
///
/// The standard error is the delta-method value, the sample SD of
/// `e^{ℓ_m − ln mean(e^ℓ)} − ℓ_m` over `√M`.
pub fn kl_monte_carlo_with_se(log_liks: &[f64]) -> Result<(f64, f64)> {
    if log_liks.is_empty() {
        return Err(Error::Config("Monte-Carlo KL needs at least one draw".into()));
    }
    if let Some(index) = log_liks.iter().position(|l| !l.is_finite()) {
        return Err(Error::numeric(
            "log-likelihood",
            format!("draw {index} has nonfinite value {}", log_liks[index]),
        ));
    }
    let m = log_liks.len() as f64;
    let log_mean = logsumexp(log_liks) - m.ln();
    let avg = mean(log_liks);
    let mut v = log_mean - avg;
    if v < 0.0 && v > -NEGATIVE_TOLERANCE.max(1e-14 * avg.abs()) {
        v = 0.0;
    }
    if log_liks.len() < 2 {
        return Ok((v.max(0.0), 0.0));
    }
    let psi: Vec<f64> = log_liks.iter().map(|l| (l - log_mean).exp() - l).collect();
    let pm = mean(&psi);
    let var = psi.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((v, (var / m).sqrt()))
}

pub fn kl_monte_carlo(log_liks: &[f64]) -> Result<f64> {
    kl_monte_carlo_with_se(log_liks).map(|(v, _)| v)
}

/// Monte-Carlo statistic of the batch with statistics `data` for a
/// conjugate family, from given posterior draws.
pub fn kl_monte_carlo_conjugate(draws: &ParamDraws<FamilyParam>, data: &SufficientStats) -> Result<(f64, f64)> {
    let ll: Vec<f64> = draws.draws.iter().map(|d| d.log_lik(data)).collect();
    kl_monte_carlo_with_se(&ll)
}

/// Sorted simulated null values of the statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    values: Vec<f64>,
}

impl NullDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("empty null sample".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("null sample", format!("replicate {i} is {}", values[i])));
        }
        values.sort_by(f64::total_cmp);
        Ok(NullDistribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `(α/2, 1 − α/2)` linear-interpolation quantiles.
    pub fn interval(&self, alpha: f64) -> (f64, f64) {
        if alpha <= 0.0 {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let a = alpha.min(1.0);
        (quantile_sorted(&self.values, 0.5 * a), quantile_sorted(&self.values, 1.0 - 0.5 * a))
    }

    fn count_below(&self, x: f64) -> usize {
        self.values.partition_point(|v| *v < x)
    }

    fn count_above(&self, x: f64) -> usize {
        self.values.len() - self.values.partition_point(|v| *v <= x)
    }

    /// Probability of detection for a statistic lying exactly on an end
    /// of the interval: the null mass at the tie is split so that the
    /// detection probability under the null is as close to `α` as the
    /// sample allows.
    fn tie_probability(&self, statistic: f64, alpha: f64, lower: f64, upper: f64) -> f64 {
        let n = self.values.len() as f64;
        let at = (self.values.len() - self.count_below(statistic) - self.count_above(statistic)) as f64 / n;
        if at == 0.0 {
            return 1.0;
        }
        let mut p = 0.0;
        if statistic == lower {
            let below = self.count_below(statistic) as f64 / n;
            p += ((0.5 * alpha - below) / at).clamp(0.0, 1.0);
        }
        if statistic == upper {
            let above = self.count_above(statistic) as f64 / n;
            p += ((0.5 * alpha - above) / at).clamp(0.0, 1.0);
        }
        p.min(1.0)
    }

    /// Decision at level `alpha`. Statistics strictly inside the interval
    /// are accepted and strictly outside are detected; a statistic equal
    /// to an end is detected when `tie_uniform` falls below the share of
    /// the tied null mass that belongs to the rejection tail.
    pub fn decide(&self, statistic: f64, alpha: f64, tie_uniform: f64) -> KlDecision {
        let (lower, upper) = self.interval(alpha);
        let mut out = decide(statistic, (lower, upper));
        out.null_sample_size = self.values.len();
        if alpha > 0.0 && (statistic == lower || statistic == upper) {
            out.boundary_tie = true;
            out.detected = tie_uniform < self.tie_probability(statistic, alpha, lower, upper);
        }
        out
    }
}

/// Detection when the statistic is not strictly inside `(lower, upper)`.
pub fn decide(statistic: f64, interval: (f64, f64)) -> KlDecision {
    let (lower, upper) = interval;
    KlDecision {
        statistic,
        lower,
        upper,
        detected: !(lower < statistic && statistic < upper),
        null_sample_size: 0,
        boundary_tie: false,
    }
}

/// Null sample of the closed-form statistic for a pseudo-batch of
/// `batch_len` observations. Replicate `m` draws its parameter and its
/// pseudo-batch from the substream `(seed, step, m)`.
pub fn conjugate_null_sample(
    post: &ConjugatePosterior,
    batch_len: usize,
    m_draws: usize,
    seed: u64,
    step: u64,
) -> Result<NullDistribution> {
    if batch_len == 0 {
        return Err(Error::Config("null distribution needs a batch of at least one observation".into()));
    }
    let eval = KlEvaluator::new(post)?;
    let pseudo: Vec<SufficientStats> = (0..m_draws as u64)
        .into_par_iter()
        .map(|m| {
            let mut rng: StreamRng = substream(seed, &[step, m]);
            let theta = post.sample_param(&mut rng);
            theta.sample_batch_stats(batch_len, &mut rng)
        })
        .collect();
    let values = match post.kind {
        // the statistic depends on the count total only; evaluate each once
        FamilyKind::Bernoulli | FamilyKind::Poisson => {
            let mut memo: HashMap<u64, f64> = HashMap::new();
            pseudo
                .iter()
                .map(|s| {
                    let key = s.s1 as u64;
                    if let Some(v) = memo.get(&key) {
                        return Ok(*v);
                    }
                    let v = eval.eval(s)?;
                    memo.insert(key, v);
                    Ok(v)
                })
                .collect::<Result<Vec<f64>>>()?
        }
        FamilyKind::Gaussian => pseudo.iter().map(|s| eval.eval(s)).collect::<Result<Vec<f64>>>()?,
    };
    NullDistribution::new(values)
}

/// A data model for which the statistic must be estimated from draws.
pub trait NullModel: Sync {
    type Param: Sync;
    type Data: Send;

    fn simulate(&self, theta: &Self::Param, rng: &mut StreamRng) -> Self::Data;

    fn log_lik(&self, theta: &Self::Param, data: &Self::Data) -> f64;

    /// Log-likelihood of `data` under every draw.
    fn log_liks(&self, draws: &[Self::Param], data: &Self::Data) -> Vec<f64> {
        draws.iter().map(|d| self.log_lik(d, data)).collect()
    }
}

/// Monte-Carlo statistic of `data` over the draws.
pub fn mc_statistic<M: NullModel>(model: &M, draws: &ParamDraws<M::Param>, data: &M::Data) -> Result<f64> {
    kl_monte_carlo(&model.log_liks(&draws.draws, data))
}

/// Null sample of the Monte-Carlo statistic: replicate `m` simulates data
/// from draw `m` with the substream `(seed, step, m)` and evaluates the
/// statistic over all draws.
pub fn mc_null_sample<M: NullModel>(
    model: &M,
    draws: &ParamDraws<M::Param>,
    seed: u64,
    step: u64,
) -> Result<NullDistribution> {
    let values = draws
        .draws
        .par_iter()
        .enumerate()
        .map(|(m, theta)| {
            let data = model.simulate(theta, &mut substream(seed, &[step, m as u64]));
            mc_statistic(model, draws, &data)
        })
        .collect::<Result<Vec<f64>>>()?;
    NullDistribution::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_derived_values() {
        let b = ConjugatePosterior::beta(2.0, 1.0).unwrap();
        let v = kl_closed_form(&b, &SufficientStats::new(1.0, 1.0, 0.0)).unwrap();
        assert!((v - ((2.0f64 / 3.0).ln() + 0.5)).abs() < 1e-12);
        let g = ConjugatePosterior::gamma(2.0, 1.0).unwrap();
        let v = kl_closed_form(&g, &SufficientStats::new(1.0, 0.0, 0.0)).unwrap();
        assert!((v - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert_eq!(kl_closed_form(&g, &SufficientStats::zero()).unwrap(), 0.0);
    }

    #[test]
    fn monte_carlo_edge_cases() {
        assert_eq!(kl_monte_carlo(&[-3.0; 10]).unwrap(), 0.0);
        assert_eq!(kl_monte_carlo(&[-7.5]).unwrap(), 0.0);
        let e = kl_monte_carlo(&[0.0, f64::NEG_INFINITY]).unwrap_err();
        assert!(e.to_string().contains("draw 1"), "{e}");
    }

    #[test]
    fn beta_monte_carlo_matches_closed_form() {
        let b = ConjugatePosterior::beta(2.0, 1.0).unwrap();
        let data = SufficientStats::new(1.0, 1.0, 0.0);
        let draws = exact_draws(&b, 100_000, 11, 0);
        let (v, se) = kl_monte_carlo_conjugate(&draws, &data).unwrap();
        let exact = kl_closed_form(&b, &data).unwrap();
        assert!((v - exact).abs() < 3.0 * se, "{v} ± {se} vs {exact}");
    }

    #[test]
    fn decide_examples() {
        assert!(!decide(0.5, (0.1, 0.9)).detected);
        assert!(decide(0.9, (0.1, 0.9)).detected);
        assert!(decide(0.1, (0.1, 0.9)).detected);
        assert!(!decide(1e300, (f64::NEG_INFINITY, f64::INFINITY)).detected);
    }

    #[test]
    fn interval_limits() {
        let null = NullDistribution::new(vec![0.3, 0.1, 0.2, 0.5, 0.4]).unwrap();
        assert_eq!(null.interval(0.0), (f64::NEG_INFINITY, f64::INFINITY));
        assert_eq!(null.interval(1.0), (0.3, 0.3));
        let same = NullDistribution::new(vec![0.7; 9]).unwrap();
        assert_eq!(same.interval(0.2), (0.7, 0.7));
        let (l, u) = null.interval(0.5);
        assert!((l - 0.2).abs() < 1e-15 && (u - 0.4).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_always_detects() {
        let null = NullDistribution::new(vec![0.0, 0.0, 0.1, 0.1, 0.1, 0.2]).unwrap();
        for &s in &[0.0, 0.1, 0.2, 0.05] {
            for &u in &[0.0, 0.5, 0.999_999] {
                assert!(null.decide(s, 1.0, u).detected);
            }
        }
    }

    #[test]
    fn tie_rule_is_calibrated_on_discrete_null() {
        // null mass 0.5 at 0, and 0.1 at each of 1..=5
        let mut v = vec![0.0; 50];
        for k in 1..=5 {
            v.extend(std::iter::repeat(k as f64).take(10));
        }
        let null = NullDistribution::new(v).unwrap();
        let alpha = 0.3;
        // exact detection probability: P(null value) * P(detect | value)
        let mut total = 0.0;
        for x in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0] {
            let weight = if x == 0.0 { 0.5 } else { 0.1 };
            let grid = 10_000;
            let hits = (0..grid).filter(|i| null.decide(x, alpha, (*i as f64 + 0.5) / grid as f64).detected).count();
            total += weight * hits as f64 / grid as f64;
        }
        assert!((total - alpha).abs() < 1e-3, "{total}");
    }
}
