// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bernoulli spiking-network model with renewal.
//!
//! Neuron `k` fires at time `t` with probability `logistic(v_{k,t})`,
//! where the voltage `v_{k,t} = Σ_l β_{k,l} X_{k,t,l}` and `X_{k,t,l}` is
//! the number of spikes of neuron `l` in the window from the last spike
//! `τ` of neuron `k` (inclusive) up to `t − 1`. Time indices are
//! zero-based; `τ` is 0 when the neuron has not fired before `t`.
//!
//! The window counts depend only on the data, so for fixed data each
//! neuron is a logistic regression on count vectors. Identical count
//! vectors are pooled, which makes likelihood evaluation cost
//! proportional to the number of distinct windows rather than to `T`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kl::{decide, mc_null_sample, mc_statistic, KlDecision, KlTestConfig, NullModel, ParamDraws, Provenance};
use crate::rng::{substream, StreamRng, CHAIN, TIE_BREAK};
use crate::special::{logistic, softplus};
use crate::stats::{mean, quantile_sorted, variance};

/// Binary `K × T` raster for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrial {
    neurons: usize,
    len: usize,
    /// Row-major, one row per neuron.
    raster: Vec<u8>,
    pub trial_id: usize,
}

impl SpikeTrial {
    pub fn new(rows: Vec<Vec<u8>>, trial_id: usize) -> Result<Self> {
        let neurons = rows.len();
        let len = rows.first().map_or(0, |r| r.len());
        if neurons == 0 || len == 0 {
            return Err(Error::Config("a spike raster needs at least one neuron and one time bin".into()));
        }
        let mut raster = Vec::with_capacity(neurons * len);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != len {
                return Err(Error::Domain { index: k, message: format!("neuron {k} has {} bins, expected {len}", row.len()) });
            }
            if let Some(t) = row.iter().position(|&v| v > 1) {
                return Err(Error::Domain { index: k, message: format!("entry ({k}, {t}) is {}, not 0 or 1", row[t]) });
            }
            raster.extend_from_slice(row);
        }
        Ok(SpikeTrial { neurons, len, raster, trial_id })
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize, t: usize) -> u8 {
        self.raster[k * self.len + t]
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.raster[k * self.len..(k + 1) * self.len]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.neurons).map(|k| self.row(k).to_vec()).collect()
    }

    pub fn spike_count(&self, k: usize) -> usize {
        self.row(k).iter().map(|&v| v as usize).sum()
    }
}

/// Functional-connection coefficients, row `k` = target, column `l` = source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBeta {
    pub beta: DMatrix<f64>,
}

impl NetworkBeta {
    pub fn new(beta: DMatrix<f64>) -> Result<Self> {
        if beta.nrows() != beta.ncols() || beta.nrows() == 0 {
            return Err(Error::Config(format!("coefficient matrix must be square and nonempty, got {}x{}", beta.nrows(), beta.ncols())));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("nonfinite network coefficient".into()));
        }
        Ok(NetworkBeta { beta })
    }

    pub fn zeros(k: usize) -> Self {
        NetworkBeta { beta: DMatrix::zeros(k, k) }
    }

    pub fn neurons(&self) -> usize {
        self.beta.nrows()
    }
}

/// Last firing time of the neuron strictly before `t`, or 0 if none.
pub fn last_spike_time(row: &[u8], t: usize) -> usize {
    row[..t.min(row.len())].iter().rposition(|&v| v == 1).unwrap_or(0)
}

/// `X_{k,t,·}`: spikes of each neuron in the window `[τ, t − 1]`.
pub fn window_counts(trial: &SpikeTrial, k: usize, t: usize) -> Vec<u32> {
    let tau = last_spike_time(trial.row(k), t);
    (0..trial.neurons()).map(|l| trial.row(l)[tau..t].iter().map(|&v| v as u32).sum()).collect()
}

pub fn voltage(trial: &SpikeTrial, beta: &NetworkBeta, k: usize, t: usize) -> f64 {
    window_counts(trial, k, t).iter().enumerate().map(|(l, &c)| beta.beta[(k, l)] * c as f64).sum()
}

pub fn firing_probability(trial: &SpikeTrial, beta: &NetworkBeta, k: usize, t: usize) -> f64 {
    logistic(voltage(trial, beta, k, t))
}

/// Advances the window counts past time `t`.
fn advance(counts: &mut [Vec<u32>], column: &[u8]) {
    for (k, c) in counts.iter_mut().enumerate() {
        if column[k] == 1 {
            for (cl, &y) in c.iter_mut().zip(column) {
                *cl = y as u32;
            }
        } else {
            for (cl, &y) in c.iter_mut().zip(column) {
                *cl += y as u32;
            }
        }
    }
}

/// Pooled logistic-regression design of one target neuron.
#[derive(Debug, Clone, Default, PartialEq)]
struct NeuronDesign {
    index: HashMap<Vec<u32>, usize>,
    /// Distinct count vectors, flattened `G × K`.
    rows: Vec<f64>,
    ones: Vec<f64>,
    total: Vec<f64>,
}

impl NeuronDesign {
    fn add(&mut self, counts: &[u32], y: u8) {
        let g = match self.index.get(counts) {
            Some(&g) => g,
            None => {
                let g = self.ones.len();
                self.index.insert(counts.to_vec(), g);
                self.rows.extend(counts.iter().map(|&c| c as f64));
                self.ones.push(0.0);
                self.total.push(0.0);
                g
            }
        };
        self.ones[g] += y as f64;
        self.total[g] += 1.0;
    }

    fn log_lik(&self, coef: &[f64]) -> f64 {
        let k = coef.len();
        let mut ll = 0.0;
        for (g, x) in self.rows.chunks_exact(k).enumerate() {
            let v: f64 = x.iter().zip(coef).map(|(a, b)| a * b).sum();
            ll += self.ones[g] * v - self.total[g] * softplus(v);
        }
        ll
    }
}

/// Pooled design of one or more trials.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDesign {
    neurons: usize,
    targets: Vec<NeuronDesign>,
}

impl NetworkDesign {
    pub fn new(neurons: usize) -> Self {
        NetworkDesign { neurons, targets: vec![NeuronDesign::default(); neurons] }
    }

    pub fn from_trial(trial: &SpikeTrial) -> Self {
        let mut d = Self::new(trial.neurons());
        d.add_trial(trial).expect("matching neuron count");
        d
    }

    pub fn add_trial(&mut self, trial: &SpikeTrial) -> Result<()> {
        if trial.neurons() != self.neurons {
            return Err(Error::Config(format!("trial {} has {} neurons, expected {}", trial.trial_id, trial.neurons(), self.neurons)));
        }
        let k = self.neurons;
        let mut counts = vec![vec![0u32; k]; k];
        let mut column = vec![0u8; k];
        for t in 0..trial.len() {
            for (l, c) in column.iter_mut().enumerate() {
                *c = trial.get(l, t);
            }
            for (target, design) in self.targets.iter_mut().enumerate() {
                design.add(&counts[target], column[target]);
            }
            advance(&mut counts, &column);
        }
        Ok(())
    }

    /// Number of distinct windows for each target neuron.
    pub fn group_counts(&self) -> Vec<usize> {
        self.targets.iter().map(|d| d.ones.len()).collect()
    }

    /// Log-likelihood terms of target neuron `k` given its coefficient row.
    pub fn neuron_log_lik(&self, k: usize, coef: &[f64]) -> f64 {
        self.targets[k].log_lik(coef)
    }

    pub fn log_lik(&self, beta: &NetworkBeta) -> f64 {
        (0..self.neurons)
            .map(|k| {
                let row: Vec<f64> = beta.beta.row(k).iter().copied().collect();
                self.neuron_log_lik(k, &row)
            })
            .sum()
    }
}

/// `Σ_t Σ_k [y ln π + (1 − y) ln(1 − π)]`.
pub fn log_likelihood(trial: &SpikeTrial, beta: &NetworkBeta) -> f64 {
    NetworkDesign::from_trial(trial).log_lik(beta)
}

/// Generates a raster forward in time from the model.
pub fn simulate_trial<R: Rng + ?Sized>(beta: &NetworkBeta, len: usize, trial_id: usize, rng: &mut R) -> SpikeTrial {
    let k = beta.neurons();
    let mut counts = vec![vec![0u32; k]; k];
    let mut rows = vec![vec![0u8; len]; k];
    let mut column = vec![0u8; k];
    for t in 0..len {
        for target in 0..k {
            let v: f64 = counts[target].iter().enumerate().map(|(l, &c)| beta.beta[(target, l)] * c as f64).sum();
            column[target] = (rng.random::<f64>() < logistic(v)) as u8;
            rows[target][t] = column[target];
        }
        advance(&mut counts, &column);
    }
    SpikeTrial { neurons: k, len, raster: rows.concat(), trial_id }
}

/// Independent normal prior on each coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentNormalPrior {
    pub mean: DMatrix<f64>,
    pub sd: DMatrix<f64>,
}

impl IndependentNormalPrior {
    pub fn standard(k: usize) -> Self {
        IndependentNormalPrior { mean: DMatrix::zeros(k, k), sd: DMatrix::from_element(k, k, 1.0) }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.mean.shape() != (k, k) || self.sd.shape() != (k, k) {
            return Err(Error::Config(format!("prior must be {k}x{k}")));
        }
        if let Some(v) = self.sd.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("prior standard deviations must be positive, got {v}")));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("nonfinite prior mean".into()));
        }
        Ok(())
    }

    fn row_log_density(&self, k: usize, coef: &[f64]) -> f64 {
        coef.iter()
            .enumerate()
            .map(|(l, b)| {
                let z = (b - self.mean[(k, l)]) / self.sd[(k, l)];
                -0.5 * z * z
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    pub iters: usize,
    pub burn: usize,
    pub proposal_sd: f64,
    pub adapt: bool,
    pub seed: u64,
    /// Keep every `thin`-th post-burn draw.
    pub thin: usize,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        MetropolisConfig { iters: 25_000, burn: 5_000, proposal_sd: 0.1, adapt: true, seed: 0, thin: 1 }
    }
}

impl MetropolisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters < self.burn {
            return Err(Error::Config(format!("iterations ({}) fewer than burn-in ({})", self.iters, self.burn)));
        }
        if !(self.proposal_sd > 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::Config(format!("proposal sd must be positive, got {}", self.proposal_sd)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thinning interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Acceptance rate targeted while adapting proposal scales.
pub const TARGET_ACCEPTANCE: f64 = 0.23;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDraws {
    pub trial_id: usize,
    pub draws: Vec<DMatrix<f64>>,
    pub initial: DMatrix<f64>,
    /// Acceptance rate after burn-in (or during it, if nothing was retained).
    pub acceptance_rate: f64,
    /// Final per-neuron proposal standard deviations.
    pub proposal_sd: Vec<f64>,
}

impl NetworkDraws {
    pub fn neurons(&self) -> usize {
        self.initial.nrows()
    }

    fn coefficient(&self, k: usize, l: usize) -> Vec<f64> {
        self.draws.iter().map(|b| b[(k, l)]).collect()
    }

    pub fn mean(&self) -> DMatrix<f64> {
        let k = self.neurons();
        DMatrix::from_fn(k, k, |i, j| mean(&self.coefficient(i, j)))
    }

    pub fn sd(&self) -> DMatrix<f64> {
        let k = self.neurons();
        DMatrix::from_fn(k, k, |i, j| variance(&self.coefficient(i, j)).sqrt())
    }

    /// Per-coefficient `(q, 1 − q)` draw quantiles.
    pub fn interval(&self, q: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.neurons();
        let mut lo = DMatrix::zeros(k, k);
        let mut hi = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut xs = self.coefficient(i, j);
                xs.sort_by(f64::total_cmp);
                lo[(i, j)] = quantile_sorted(&xs, q);
                hi[(i, j)] = quantile_sorted(&xs, 1.0 - q);
            }
        }
        (lo, hi)
    }

    /// `m` draws evenly spaced through the chain.
    pub fn subsample(&self, m: usize) -> Vec<DMatrix<f64>> {
        let n = self.draws.len();
        if m >= n {
            return self.draws.clone();
        }
        (0..m).map(|i| self.draws[i * n / m].clone()).collect()
    }
}

/// Random-scan Metropolis over rows of β.
///
/// Each iteration picks a target neuron uniformly and proposes a joint
/// Gaussian random-walk move of its whole coefficient row. Proposal
/// scales adapt per neuron toward [`TARGET_ACCEPTANCE`] during burn-in
/// when `cfg.adapt` is set and are frozen afterwards.
pub fn metropolis_fit_design(
    design: &NetworkDesign,
    prior: &IndependentNormalPrior,
    cfg: &MetropolisConfig,
    rng: &mut StreamRng,
    trial_id: usize,
) -> Result<NetworkDraws> {
    cfg.validate()?;
    let k = design.neurons;
    prior.validate(k)?;
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; k]; k];
    let initial = DMatrix::zeros(k, k);
    let mut target: Vec<f64> = (0..k).map(|i| design.neuron_log_lik(i, &rows[i]) + prior.row_log_density(i, &rows[i])).collect();
    let mut log_sd = vec![cfg.proposal_sd.ln(); k];
    let mut visits = vec![0usize; k];
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let mut draws = Vec::with_capacity((cfg.iters - cfg.burn) / cfg.thin);
    let mut proposal = vec![0.0; k];
    for it in 0..cfg.iters {
        if it == cfg.burn {
            accepted = 0;
            proposed = 0;
        }
        let i = rng.random_range(0..k);
        let sd = log_sd[i].exp();
        for (p, r) in proposal.iter_mut().zip(&rows[i]) {
            let z: f64 = rng.sample(StandardNormal);
            *p = r + sd * z;
        }
        let cand = design.neuron_log_lik(i, &proposal) + prior.row_log_density(i, &proposal);
        let log_ratio = cand - target[i];
        if log_ratio.is_nan() {
            return Err(Error::numeric("metropolis acceptance ratio", format!("NaN at iteration {it}")));
        }
        let u: f64 = rng.random();
        let accept = log_ratio >= 0.0 || u.ln() < log_ratio;
        if accept {
            rows[i].copy_from_slice(&proposal);
            target[i] = cand;
            accepted += 1;
        }
        proposed += 1;
        if cfg.adapt && it < cfg.burn {
            visits[i] += 1;
            let gain = (visits[i] as f64).powf(-0.6);
            log_sd[i] += gain * (accept as u8 as f64 - TARGET_ACCEPTANCE);
        }
        if it >= cfg.burn && (it - cfg.burn) % cfg.thin == 0 {
            draws.push(DMatrix::from_fn(k, k, |a, b| rows[a][b]));
        }
    }
    let acceptance_rate = if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 };
    Ok(NetworkDraws { trial_id, draws, initial, acceptance_rate, proposal_sd: log_sd.iter().map(|v| v.exp()).collect() })
}

pub fn metropolis_fit(trial: &SpikeTrial, prior: &IndependentNormalPrior, cfg: &MetropolisConfig) -> Result<NetworkDraws> {
    let design = NetworkDesign::from_trial(trial);
    metropolis_fit_design(&design, prior, cfg, &mut substream(cfg.seed, &[CHAIN]), trial.trial_id)
}

/// Transfer prior from per-coefficient posterior means and SDs.
pub fn moment_match_network(draws: &NetworkDraws) -> Result<IndependentNormalPrior> {
    if draws.draws.len() < 2 {
        return Err(Error::DegenerateMoments("need at least two draws to estimate posterior spread".into()));
    }
    let sd = draws.sd();
    if let Some(v) = sd.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateMoments(format!("posterior draw spread {v} is not positive")));
    }
    Ok(IndependentNormalPrior { mean: draws.mean(), sd })
}

/// Null model of a whole trial of fixed shape.
pub struct SpikeNullModel {
    pub len: usize,
}

impl NullModel for SpikeNullModel {
    type Param = NetworkBeta;
    type Data = SpikeTrial;

    fn simulate(&self, theta: &NetworkBeta, rng: &mut StreamRng) -> SpikeTrial {
        simulate_trial(theta, self.len, 0, rng)
    }

    fn log_lik(&self, theta: &NetworkBeta, data: &SpikeTrial) -> f64 {
        log_likelihood(data, theta)
    }

    fn log_liks(&self, draws: &[NetworkBeta], data: &SpikeTrial) -> Vec<f64> {
        let design = NetworkDesign::from_trial(data);
        draws.iter().map(|b| design.log_lik(b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeStepRecord {
    /// One-based position of the trial in the sequence.
    pub step: usize,
    pub trial_id: usize,
    pub decision: Option<KlDecision>,
    pub last_cp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSequenceResult {
    pub fits: Vec<NetworkDraws>,
    pub trace: Vec<SpikeStepRecord>,
}

impl SpikeSequenceResult {
    pub fn detection_steps(&self) -> Vec<usize> {
        self.trace.iter().filter(|r| r.decision.is_some_and(|d| d.detected)).map(|r| r.step).collect()
    }
}

fn test_trial(prev: &NetworkDraws, trial: &SpikeTrial, cfg: &KlTestConfig, step: usize) -> Result<KlDecision> {
    let sub: Vec<NetworkBeta> = prev.subsample(cfg.m_draws).into_iter().map(|beta| NetworkBeta { beta }).collect();
    let draws = ParamDraws::new(sub, Provenance::Mcmc)?;
    let model = SpikeNullModel { len: trial.len() };
    let statistic = mc_statistic(&model, &draws, trial)?;
    if cfg.alpha == 0.0 {
        return Ok(decide(statistic, (f64::NEG_INFINITY, f64::INFINITY)));
    }
    let null = mc_null_sample(&model, &draws, cfg.seed, step as u64)?;
    let tie: f64 = substream(cfg.seed, &[step as u64, TIE_BREAK]).random();
    Ok(null.decide(statistic, cfg.alpha, tie))
}

/// Fits a sequence of trials, testing each trial after the first against
/// the posterior from the trials since the last change-point.
pub fn fit_sequence(
    trials: &[SpikeTrial],
    prior: &IndependentNormalPrior,
    cfg: &KlTestConfig,
    mcfg: &MetropolisConfig,
) -> Result<SpikeSequenceResult> {
    cfg.validate()?;
    mcfg.validate()?;
    let Some(first) = trials.first() else {
        return Ok(SpikeSequenceResult { fits: vec![], trace: vec![] });
    };
    let k = first.neurons();
    prior.validate(k)?;
    let mut segment_prior = prior.clone();
    let mut design = NetworkDesign::new(k);
    let mut last_cp = 1;
    let mut fits: Vec<NetworkDraws> = Vec::with_capacity(trials.len());
    let mut trace = Vec::with_capacity(trials.len());
    for (i, trial) in trials.iter().enumerate() {
        let step = i + 1;
        let mut run = || -> Result<(Option<KlDecision>, NetworkDraws)> {
            if trial.neurons() != k {
                return Err(Error::Config(format!("trial has {} neurons, expected {k}", trial.neurons())));
            }
            let decision = match fits.last() {
                Some(prev) => Some(test_trial(prev, trial, cfg, step)?),
                None => None,
            };
            if decision.is_some_and(|d| d.detected) {
                segment_prior = moment_match_network(fits.last().expect("tested trials follow a fit"))?;
                design = NetworkDesign::from_trial(trial);
                last_cp = step;
            } else {
                design.add_trial(trial)?;
            }
            let mut rng = substream(mcfg.seed, &[step as u64, CHAIN]);
            let fit = metropolis_fit_design(&design, &segment_prior, mcfg, &mut rng, trial.trial_id)?;
            Ok((decision, fit))
        };
        let (decision, fit) = run().map_err(|e| e.at_step(step))?;
        if fit.draws.is_empty() && i + 1 < trials.len() {
            return Err(Error::Config("no retained draws to test the next trial against".into()).at_step(step));
        }
        fits.push(fit);
        trace.push(SpikeStepRecord { step, trial_id: trial.trial_id, decision, last_cp });
    }
    Ok(SpikeSequenceResult { fits, trace })
}

/// 2.5% and 97.5% coefficient quantiles of one trial's fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialIntervals {
    pub trial_id: usize,
    pub mean: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub excitatory_prop: DMatrix<f64>,
    pub inhibitory_prop: DMatrix<f64>,
    pub intervals: Vec<TrialIntervals>,
}

/// Whether an interval lies above zero (`Some(true)`), below zero
/// (`Some(false)`), or straddles it.
pub fn interval_sign(lower: f64, upper: f64) -> Option<bool> {
    if lower > 0.0 {
        Some(true)
    } else if upper < 0.0 {
        Some(false)
    } else {
        None
    }
}

/// Fraction of trials in which each coefficient's 95% interval lies
/// entirely above or entirely below zero.
pub fn significance_summary(fits: &[NetworkDraws]) -> Result<NetworkSummary> {
    let fitted: Vec<&NetworkDraws> = fits.iter().filter(|f| !f.draws.is_empty()).collect();
    if fitted.is_empty() {
        return Err(Error::Config("no fitted trials to summarise".into()));
    }
    let k = fitted[0].neurons();
    let mut exc = DMatrix::zeros(k, k);
    let mut inh = DMatrix::zeros(k, k);
    let mut intervals = Vec::with_capacity(fitted.len());
    for f in &fitted {
        let (lower, upper) = f.interval(0.025);
        for i in 0..k {
            for j in 0..k {
                match interval_sign(lower[(i, j)], upper[(i, j)]) {
                    Some(true) => exc[(i, j)] += 1.0,
                    Some(false) => inh[(i, j)] += 1.0,
                    None => {}
                }
            }
        }
        intervals.push(TrialIntervals { trial_id: f.trial_id, mean: f.mean(), lower, upper });
    }
    let n = fitted.len() as f64;
    Ok(NetworkSummary { excitatory_prop: exc / n, inhibitory_prop: inh / n, intervals })
}
