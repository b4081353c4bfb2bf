// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequential test-then-update loop for the conjugate families.
//!
//! At each step after the first the incoming batch is tested against the
//! current posterior. Without a detection the batch is absorbed by the
//! usual Bayes update. With a detection, the posterior is replaced by a
//! prior that matches its first two moments and the batch is absorbed
//! into that prior, so nothing from before the change is carried
//! forward except those moments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{moment_match, ConjugatePosterior, FamilyKind, PosteriorMoments, SufficientStats};
use crate::kl::{conjugate_null_sample, decide, KlDecision, KlEvaluator, KlTestConfig};
use crate::rng::{substream, TIE_BREAK};

/// One processed batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub n_obs: usize,
    /// `None` at the first step, which is never tested.
    pub decision: Option<KlDecision>,
    /// Moments of the posterior after absorbing the batch.
    pub estimate: PosteriorMoments,
    pub stats: SufficientStats,
    pub last_cp: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChangePointTrace {
    pub steps: Vec<StepRecord>,
}

impl ChangePointTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(step, decision)` for every detected change-point, in order.
    pub fn detections(&self) -> Vec<(usize, KlDecision)> {
        self.steps
            .iter()
            .filter_map(|r| r.decision.filter(|d| d.detected).map(|d| (r.step, d)))
            .collect()
    }

    pub fn detection_steps(&self) -> Vec<usize> {
        self.detections().into_iter().map(|(s, _)| s).collect()
    }

    pub fn estimates(&self) -> impl Iterator<Item = &PosteriorMoments> {
        self.steps.iter().map(|r| &r.estimate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub posterior: ConjugatePosterior,
    /// Prior of the current segment: the initial prior, or the transfer
    /// prior installed at `last_cp`.
    pub segment_prior: ConjugatePosterior,
    /// Step of the last detected change-point, 1 if none.
    pub last_cp: usize,
    /// Number of batches processed.
    pub step: usize,
    /// Shape coefficient of the Gaussian transfer prior.
    pub nu: Option<f64>,
    pub trace: ChangePointTrace,
}

impl EngineState {
    pub fn new(prior: ConjugatePosterior, nu: Option<f64>) -> Result<Self> {
        prior.validate()?;
        if prior.kind == FamilyKind::Gaussian {
            match nu {
                Some(v) if v > 2.0 && v.is_finite() => {}
                Some(v) => return Err(Error::Config(format!("nu must exceed 2, got {v}"))),
                None => return Err(Error::Config("the gaussian model needs the shape coefficient nu".into())),
            }
        }
        Ok(EngineState { posterior: prior, segment_prior: prior, last_cp: 1, step: 0, nu, trace: ChangePointTrace::default() })
    }

    pub fn kind(&self) -> FamilyKind {
        self.posterior.kind
    }

    /// Sufficient statistics of the data absorbed since `last_cp`.
    pub fn segment_data(&self) -> SufficientStats {
        self.posterior.stats - self.segment_prior.stats
    }

    pub fn has_detected(&self) -> bool {
        self.trace.steps.iter().any(|r| r.decision.is_some_and(|d| d.detected))
    }
}

fn test_batch(state: &EngineState, data: &SufficientStats, n_obs: usize, cfg: &KlTestConfig, step: usize) -> Result<KlDecision> {
    let statistic = KlEvaluator::new(&state.posterior)?.eval(data)?;
    if cfg.alpha == 0.0 {
        return Ok(decide(statistic, (f64::NEG_INFINITY, f64::INFINITY)));
    }
    let null = conjugate_null_sample(&state.posterior, n_obs, cfg.m_draws, cfg.seed, step as u64)?;
    let tie: f64 = substream(cfg.seed, &[step as u64, TIE_BREAK]).random();
    Ok(null.decide(statistic, cfg.alpha, tie))
}

fn step_inner(state: &EngineState, batch: &[f64], cfg: &KlTestConfig) -> Result<EngineState> {
    let step = state.step + 1;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let data = state.kind().batch_stats(batch)?;
    let mut next = state.clone();
    next.step = step;
    let decision = if step == 1 { None } else { Some(test_batch(state, &data, batch.len(), cfg, step)?) };
    if decision.is_some_and(|d| d.detected) {
        let prior = moment_match(&state.posterior, state.nu)?.to_posterior()?;
        next.segment_prior = prior;
        next.posterior = prior.absorb(data);
        next.last_cp = step;
    } else {
        next.posterior = state.posterior.absorb(data);
    }
    next.posterior.validate()?;
    next.trace.steps.push(StepRecord {
        step,
        n_obs: batch.len(),
        decision,
        estimate: next.posterior.moments()?,
        stats: next.posterior.stats,
        last_cp: next.last_cp,
    });
    Ok(next)
}

/// Processes one batch. Errors carry the step index.
pub fn step(state: &EngineState, batch: &[f64], cfg: &KlTestConfig) -> Result<EngineState> {
    cfg.validate()?;
    step_inner(state, batch, cfg).map_err(|e| e.at_step(state.step + 1))
}

/// A failed run with the trace of the steps that succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: Error,
    pub partial: ChangePointTrace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed steps)", self.error, self.partial.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs the engine over a series and returns the final state.
pub fn run_state<B: AsRef<[f64]>>(
    series: &[B],
    prior: ConjugatePosterior,
    nu: Option<f64>,
    cfg: &KlTestConfig,
) -> std::result::Result<EngineState, RunFailure> {
    let fail = |error, partial| RunFailure { error, partial };
    let mut state = EngineState::new(prior, nu).map_err(|e| fail(e, ChangePointTrace::default()))?;
    cfg.validate().map_err(|e| fail(e, ChangePointTrace::default()))?;
    for batch in series {
        state = match step(&state, batch.as_ref(), cfg) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, state.trace)),
        };
    }
    Ok(state)
}

pub fn run<B: AsRef<[f64]>>(
    series: &[B],
    prior: ConjugatePosterior,
    nu: Option<f64>,
    cfg: &KlTestConfig,
) -> std::result::Result<ChangePointTrace, RunFailure> {
    run_state(series, prior, nu, cfg).map(|s| s.trace)
}

/// Student-t one-step-ahead predictive for the Gaussian family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveT {
    pub dof: f64,
    pub location: f64,
    /// Precision-like third argument: the reciprocal of the squared scale.
    pub scale_third_arg: f64,
    pub mean: f64,
    /// `+inf` when `dof <= 2`.
    #[serde(with = "crate::serde_float::scalar")]
    pub variance: f64,
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 2.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("nu must exceed 2, got {nu}")))
    }
}

/// Predictive after a segment prior `μ ~ N(mu_hat, σ²)`,
/// `σ² ~ IG(ν/2, ν sigma_hat_sq/2)` and segment data with statistics `seg`.
pub fn predictive_since_change(nu: f64, mu_hat: f64, sigma_hat_sq: f64, seg: &SufficientStats) -> Result<PredictiveT> {
    check_nu(nu)?;
    if !(sigma_hat_sq > 0.0) {
        return Err(Error::Config(format!("scale must be positive, got {sigma_hat_sq}")));
    }
    let m = seg.n;
    let (ybar, within) = if m > 0.0 { (seg.s1 / m, (seg.s2 - seg.s1 * seg.s1 / m).max(0.0)) } else { (0.0, 0.0) };
    let location = (mu_hat + m * ybar) / (m + 1.0);
    let b = 0.5 * nu * sigma_hat_sq + 0.5 * within + m * (mu_hat - ybar).powi(2) / (2.0 * (m + 1.0));
    let dof = nu + m;
    let scale_third_arg = (m + 1.0) / (m + 2.0) * 0.5 * dof / b;
    let variance = if dof > 2.0 { 2.0 * b * (m + 2.0) / ((m + 1.0) * (dof - 2.0)) } else { f64::INFINITY };
    Ok(PredictiveT { dof, location, scale_third_arg, mean: location, variance })
}

/// Predictive with no change-point so far, from the initial `(mu0, sigma0_sq)`
/// and the first `i` observations `ys`.
pub fn predictive_from_start(nu: f64, mu0: f64, sigma0_sq: f64, ys: &[f64]) -> Result<PredictiveT> {
    let data = FamilyKind::Gaussian.batch_stats(ys)?;
    predictive_since_change(nu, mu0, sigma0_sq, &data)
}

/// Predictive of the next observation given the engine state.
///
/// Before any detection the initial `(mu0, sigma0_sq)` and all data are
/// used; afterwards the transfer prior's location and scale and the data
/// since the last change-point.
pub fn predictive(state: &EngineState, nu: f64, mu0: f64, sigma0_sq: f64) -> Result<PredictiveT> {
    if state.kind() != FamilyKind::Gaussian {
        return Err(Error::Config(format!("predictive is defined for the gaussian family, not {}", state.kind())));
    }
    check_nu(nu)?;
    let seg = state.segment_data();
    if !state.has_detected() {
        return predictive_since_change(nu, mu0, sigma0_sq, &seg);
    }
    let prior = state.segment_prior.nig()?;
    predictive_since_change(nu, prior.location, 2.0 * prior.rate / nu, &seg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_one_is_plain_update() {
        let prior = ConjugatePosterior::beta(1.0, 1.0).unwrap();
        let cfg = KlTestConfig::new(1.0, 50, 1).unwrap();
        let s = EngineState::new(prior, None).unwrap();
        let s = step(&s, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(s.posterior.stats, SufficientStats::new(4.0, 3.0, 0.0));
        assert!(s.trace.steps[0].decision.is_none());
        assert_eq!(s.last_cp, 1);
    }

    #[test]
    fn errors_carry_the_step() {
        let prior = ConjugatePosterior::beta(1.0, 1.0).unwrap();
        let cfg = KlTestConfig::new(0.1, 50, 1).unwrap();
        let series = vec![vec![1.0], vec![0.0], vec![2.0]];
        let fail = run(&series, prior, None, &cfg).unwrap_err();
        assert!(matches!(fail.error, Error::AtStep { step: 3, .. }), "{}", fail.error);
        assert_eq!(fail.partial.len(), 2);
    }

    #[test]
    fn predictive_location_example() {
        let p = predictive_from_start(5.0, 0.0, 1.0, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((p.location - 0.8).abs() < 1e-15);
        assert_eq!(p.dof, 9.0);
        assert_eq!(p.mean, p.location);
    }

    #[test]
    fn gaussian_engine_requires_nu() {
        let prior = ConjugatePosterior::default_prior(FamilyKind::Gaussian, 5.0).unwrap();
        assert!(EngineState::new(prior, None).is_err());
        assert!(EngineState::new(prior, Some(2.0)).is_err());
        assert!(EngineState::new(prior, Some(5.0)).is_ok());
    }
}
