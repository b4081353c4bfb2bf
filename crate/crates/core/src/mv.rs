// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multivariate Gaussian model with a Normal-inverse-Wishart prior.
//!
//! `Σ ~ IW(dof, Ψ)`, `μ | Σ ~ N(m, Σ/κ)`, observations `y ~ N(μ, Σ)`.
//! The posterior is sampled by alternating the two full conditionals and
//! the change-point statistic is always estimated from the draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::Add;

use crate::error::{Error, Result};
use crate::kl::{decide, mc_null_sample, mc_statistic, KlDecision, KlTestConfig, NullModel, ParamDraws, Provenance};
use crate::rng::{substream, StreamRng, CHAIN, TIE_BREAK};
use crate::stats::quantile;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwParams {
    pub dim: usize,
    pub location: DVector<f64>,
    pub scale_matrix: DMatrix<f64>,
    pub kappa: f64,
    pub dof: f64,
}

fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::Config(format!("{what} is {}x{}, not square", p, m.ncols())));
    }
    let scale = m.amax().max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Config(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("{what} is not positive definite")));
    }
    Ok(())
}

impl NiwParams {
    pub fn new(location: DVector<f64>, scale_matrix: DMatrix<f64>, kappa: f64, dof: f64) -> Result<Self> {
        let p = NiwParams { dim: location.len(), location, scale_matrix, kappa, dof };
        p.validate()?;
        Ok(p)
    }

    /// Prior centred at zero whose expected covariance is the identity.
    pub fn standard(dim: usize, dof: f64) -> Result<Self> {
        let factor = dof - dim as f64 - 1.0;
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim) * factor, 1.0, dof)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim;
        if p == 0 || self.location.len() != p || self.scale_matrix.nrows() != p {
            return Err(Error::Config(format!("inconsistent dimensions for a {p}-dimensional prior")));
        }
        if !self.location.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("nonfinite prior location".into()));
        }
        check_spd(&self.scale_matrix, "scale matrix")?;
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.dof > p as f64 + 1.0) {
            return Err(Error::Config(format!("dof must exceed dim + 1 = {}, got {}", p + 1, self.dof)));
        }
        Ok(())
    }

    /// `E[Σ] = Ψ / (dof − p − 1)`.
    pub fn mean_sigma(&self) -> DMatrix<f64> {
        &self.scale_matrix / (self.dof - self.dim as f64 - 1.0)
    }
}

/// Observations as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MvBatch {
    pub observations: DMatrix<f64>,
}

impl MvBatch {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        if observations.nrows() == 0 || observations.ncols() == 0 {
            return Err(Error::Config("empty multivariate batch".into()));
        }
        if let Some(index) = observations.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (r, c) = (index % observations.nrows(), index / observations.nrows());
            return Err(Error::Domain { index: r, message: format!("nonfinite value in column {c}") });
        }
        Ok(MvBatch { observations })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Domain { index: i, message: format!("expected {p} values") });
        }
        Self::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn stats(&self) -> MvStats {
        let y = &self.observations;
        MvStats {
            n: y.nrows() as f64,
            sum: y.row_sum().transpose(),
            outer: y.transpose() * y,
        }
    }
}

/// Count, sum and raw cross-product `Σ y yᵀ` of a set of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MvStats {
    pub n: f64,
    pub sum: DVector<f64>,
    pub outer: DMatrix<f64>,
}

impl MvStats {
    pub fn zero(dim: usize) -> Self {
        MvStats { n: 0.0, sum: DVector::zeros(dim), outer: DMatrix::zeros(dim, dim) }
    }

    /// Scatter matrix about `mu`: `Σ (y − μ)(y − μ)ᵀ`.
    pub fn scatter_about(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let cross = &self.sum * mu.transpose();
        &self.outer - &cross - cross.transpose() + mu * mu.transpose() * self.n
    }
}

impl Add for &MvStats {
    type Output = MvStats;
    fn add(self, o: &MvStats) -> MvStats {
        MvStats { n: self.n + o.n, sum: &self.sum + &o.sum, outer: &self.outer + &o.outer }
    }
}

/// Closed-form NIW posterior after observing `data`.
pub fn niw_posterior(prior: &NiwParams, data: &MvStats) -> NiwParams {
    if data.n == 0.0 {
        return prior.clone();
    }
    let kn = prior.kappa + data.n;
    let mean = &data.sum / data.n;
    let loc = (&prior.location * prior.kappa + &data.sum) / kn;
    let within = data.scatter_about(&mean);
    let d = &mean - &prior.location;
    let scale = &prior.scale_matrix + within + &d * d.transpose() * (prior.kappa * data.n / kn);
    NiwParams { dim: prior.dim, location: loc, scale_matrix: symmetrize(scale), kappa: kn, dof: prior.dof + data.n }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn standard_normal_vec<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Draws from `IW(dof, scale)` by the Bartlett decomposition of the
/// Wishart-distributed precision.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(dof: f64, scale: &DMatrix<f64>, rng: &mut R) -> Option<DMatrix<f64>> {
    let p = scale.nrows();
    let inv = scale.clone().cholesky()?.inverse();
    let l = inv.cholesky()?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).ok()?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Some(symmetrize(w.cholesky()?.inverse()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvPosteriorDraws {
    pub mus: Vec<DVector<f64>>,
    pub sigmas: Vec<DMatrix<f64>>,
    pub retained: usize,
}

impl MvPosteriorDraws {
    pub fn mean_mu(&self) -> DVector<f64> {
        let p = self.mus[0].len();
        self.mus.iter().fold(DVector::zeros(p), |a, m| a + m) / self.mus.len() as f64
    }

    pub fn mean_sigma(&self) -> DMatrix<f64> {
        let p = self.mus[0].len();
        self.sigmas.iter().fold(DMatrix::zeros(p, p), |a, s| a + s) / self.sigmas.len() as f64
    }

    /// Per-component `(q, 1 − q)` quantiles of μ.
    pub fn mu_interval(&self, q: f64) -> Vec<(f64, f64)> {
        let p = self.mus[0].len();
        (0..p)
            .map(|k| {
                let xs: Vec<f64> = self.mus.iter().map(|m| m[k]).collect();
                (quantile(&xs, q), quantile(&xs, 1.0 - q))
            })
            .collect()
    }

    /// Per-entry `(q, 1 − q)` quantiles of Σ, row-major.
    pub fn sigma_interval(&self, q: f64) -> Vec<Vec<(f64, f64)>> {
        let p = self.mus[0].len();
        (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        let xs: Vec<f64> = self.sigmas.iter().map(|s| s[(i, j)]).collect();
                        (quantile(&xs, q), quantile(&xs, 1.0 - q))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iters: usize,
    pub burn: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig { iters: 1000, burn: 500 }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burn {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iters, self.burn
            )));
        }
        Ok(())
    }
}

/// Gibbs sampler on sufficient statistics.
pub fn gibbs_fit_stats(prior: &NiwParams, data: &MvStats, cfg: &GibbsConfig, rng: &mut StreamRng) -> Result<MvPosteriorDraws> {
    cfg.validate()?;
    prior.validate()?;
    let p = prior.dim;
    let kn = prior.kappa + data.n;
    let mu_mean = (&prior.location * prior.kappa + &data.sum) / kn;
    let dof = prior.dof + data.n + 1.0;
    let mut sigma = prior.mean_sigma();
    let mut mus = Vec::with_capacity(cfg.iters - cfg.burn);
    let mut sigmas = Vec::with_capacity(cfg.iters - cfg.burn);
    for it in 0..cfg.iters {
        let fail = || Error::numeric("gibbs sampler", format!("Cholesky factorisation failed at iteration {it}"));
        let l = sigma.clone().cholesky().ok_or_else(fail)?.l();
        let mu = &mu_mean + l * standard_normal_vec(p, rng) / kn.sqrt();
        let d = &mu - &prior.location;
        let scale = symmetrize(&prior.scale_matrix + data.scatter_about(&mu) + &d * d.transpose() * prior.kappa);
        sigma = sample_inverse_wishart(dof, &scale, rng).ok_or_else(fail)?;
        if it >= cfg.burn {
            mus.push(mu);
            sigmas.push(sigma.clone());
        }
    }
    let retained = mus.len();
    Ok(MvPosteriorDraws { mus, sigmas, retained })
}

pub fn gibbs_fit(prior: &NiwParams, batch: &MvBatch, iters: usize, burn: usize, seed: u64) -> Result<MvPosteriorDraws> {
    if batch.dim() != prior.dim {
        return Err(Error::Config(format!("batch has {} columns, prior has dimension {}", batch.dim(), prior.dim)));
    }
    gibbs_fit_stats(prior, &batch.stats(), &GibbsConfig { iters, burn }, &mut substream(seed, &[CHAIN]))
}

/// Nearest symmetric matrix with eigenvalues at least `floor`.
fn project_spd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Transfer prior whose expectations of μ and Σ equal the draw means.
pub fn niw_moment_match(draws: &MvPosteriorDraws, dof: f64) -> Result<NiwParams> {
    if draws.mus.is_empty() {
        return Err(Error::Config("no posterior draws to match".into()));
    }
    let p = draws.mus[0].len();
    if !(dof > p as f64 + 1.0) {
        return Err(Error::Config(format!("dof must exceed dim + 1 = {}, got {dof}", p + 1)));
    }
    let mut sigma = symmetrize(draws.mean_sigma());
    if sigma.clone().cholesky().is_none() {
        log::warn!("mean of covariance draws is not positive definite; projecting");
        sigma = project_spd(&sigma, 1e-10 * sigma.amax().max(1e-300));
    }
    NiwParams::new(draws.mean_mu(), sigma * (dof - p as f64 - 1.0), 1.0, dof)
}

/// A posterior draw with the quantities needed for fast likelihoods.
#[derive(Debug, Clone)]
pub struct MvDraw {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    prec: DMatrix<f64>,
    log_det: f64,
    prec_mu: DVector<f64>,
    mu_prec_mu: f64,
}

impl MvDraw {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let ch = sigma.clone().cholesky().ok_or_else(|| Error::numeric("covariance draw", "not positive definite"))?;
        let chol = ch.l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let prec = ch.inverse();
        let prec_mu = &prec * &mu;
        let mu_prec_mu = mu.dot(&prec_mu);
        Ok(MvDraw { mu, sigma, chol, prec, log_det, prec_mu, mu_prec_mu })
    }

    /// Gaussian log-likelihood of data summarised by `s`.
    pub fn log_lik(&self, s: &MvStats) -> f64 {
        let p = self.mu.len() as f64;
        let quad = self.prec.dot(&s.outer) - 2.0 * s.sum.dot(&self.prec_mu) + s.n * self.mu_prec_mu;
        -0.5 * (s.n * (p * LN_2PI + self.log_det) + quad)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> MvStats {
        let p = self.mu.len();
        let mut out = MvStats::zero(p);
        for _ in 0..n {
            let y = &self.mu + &self.chol * standard_normal_vec(p, rng);
            out.outer += &y * y.transpose();
            out.sum += y;
            out.n += 1.0;
        }
        out
    }
}

pub fn prepare_draws(draws: &MvPosteriorDraws) -> Result<ParamDraws<MvDraw>> {
    let d = draws
        .mus
        .iter()
        .zip(&draws.sigmas)
        .map(|(m, s)| MvDraw::new(m.clone(), s.clone()))
        .collect::<Result<Vec<_>>>()?;
    ParamDraws::new(d, Provenance::Mcmc)
}

/// Model for simulating null batches of a fixed length.
///
/// Each draw's log-likelihood is linear in the features
/// `(vec Σyyᵀ, Σy, n)`, so all draws are scored with one matrix-vector
/// product against a precomputed coefficient matrix.
pub struct MvNullModel {
    pub batch_len: usize,
    coef: DMatrix<f64>,
}

impl MvNullModel {
    pub fn new(batch_len: usize, draws: &ParamDraws<MvDraw>) -> Self {
        let p = draws.draws[0].mu.len();
        let width = p * p + p + 1;
        let mut coef = DMatrix::zeros(draws.len(), width);
        for (j, d) in draws.draws.iter().enumerate() {
            for (k, v) in d.prec.iter().enumerate() {
                coef[(j, k)] = -0.5 * v;
            }
            for k in 0..p {
                coef[(j, p * p + k)] = d.prec_mu[k];
            }
            coef[(j, width - 1)] = -0.5 * (p as f64 * LN_2PI + d.log_det + d.mu_prec_mu);
        }
        MvNullModel { batch_len, coef }
    }

    fn features(data: &MvStats) -> DVector<f64> {
        let p = data.sum.len();
        let mut f = DVector::zeros(p * p + p + 1);
        for (k, v) in data.outer.iter().enumerate() {
            f[k] = *v;
        }
        for k in 0..p {
            f[p * p + k] = data.sum[k];
        }
        f[p * p + p] = data.n;
        f
    }
}

impl NullModel for MvNullModel {
    type Param = MvDraw;
    type Data = MvStats;

    fn simulate(&self, theta: &MvDraw, rng: &mut StreamRng) -> MvStats {
        theta.sample(self.batch_len, rng)
    }

    fn log_lik(&self, theta: &MvDraw, data: &MvStats) -> f64 {
        theta.log_lik(data)
    }

    fn log_liks(&self, draws: &[MvDraw], data: &MvStats) -> Vec<f64> {
        if draws.len() != self.coef.nrows() {
            return draws.iter().map(|d| d.log_lik(data)).collect();
        }
        (&self.coef * Self::features(data)).iter().copied().collect()
    }
}

/// Settings of the multivariate engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvEngineConfig {
    pub gibbs: GibbsConfig,
    /// Degrees of freedom of the transfer prior.
    pub dof: f64,
}

impl Default for MvEngineConfig {
    fn default() -> Self {
        MvEngineConfig { gibbs: GibbsConfig::default(), dof: 9.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvStepRecord {
    pub step: usize,
    pub n_obs: usize,
    pub decision: Option<KlDecision>,
    pub last_cp: usize,
    pub mean_mu: Vec<f64>,
    pub mean_sigma: Vec<Vec<f64>>,
    /// 10% and 90% draw quantiles of each μ component.
    pub mu_interval: Vec<(f64, f64)>,
    /// 10% and 90% draw quantiles of each Σ entry.
    pub sigma_interval: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MvTrace {
    pub steps: Vec<MvStepRecord>,
}

impl MvTrace {
    pub fn detection_steps(&self) -> Vec<usize> {
        self.steps.iter().filter(|r| r.decision.is_some_and(|d| d.detected)).map(|r| r.step).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MvEngineState {
    pub segment_prior: NiwParams,
    /// Data absorbed since `last_cp`.
    pub segment_data: MvStats,
    pub draws: Option<MvPosteriorDraws>,
    pub last_cp: usize,
    pub step: usize,
    pub trace: MvTrace,
}

impl MvEngineState {
    pub fn new(prior: NiwParams) -> Result<Self> {
        prior.validate()?;
        let dim = prior.dim;
        Ok(MvEngineState { segment_prior: prior, segment_data: MvStats::zero(dim), draws: None, last_cp: 1, step: 0, trace: MvTrace::default() })
    }
}

fn mv_step_inner(state: &MvEngineState, batch: &MvBatch, cfg: &KlTestConfig, mcfg: &MvEngineConfig) -> Result<MvEngineState> {
    let step = state.step + 1;
    if batch.dim() != state.segment_prior.dim {
        return Err(Error::Config(format!("batch has {} columns, model has {}", batch.dim(), state.segment_prior.dim)));
    }
    let data = batch.stats();
    let mut next = state.clone();
    next.step = step;
    let decision = match (&state.draws, step) {
        (Some(draws), s) if s > 1 => {
            let prepared = prepare_draws(draws)?;
            let model = MvNullModel::new(batch.len(), &prepared);
            let statistic = mc_statistic(&model, &prepared, &data)?;
            Some(if cfg.alpha == 0.0 {
                decide(statistic, (f64::NEG_INFINITY, f64::INFINITY))
            } else {
                let null = mc_null_sample(&model, &prepared, cfg.seed, step as u64)?;
                let tie: f64 = substream(cfg.seed, &[step as u64, TIE_BREAK]).random();
                null.decide(statistic, cfg.alpha, tie)
            })
        }
        _ => None,
    };
    if decision.is_some_and(|d| d.detected) {
        let draws = state.draws.as_ref().expect("tested steps have draws");
        next.segment_prior = niw_moment_match(draws, mcfg.dof)?;
        next.segment_data = data;
        next.last_cp = step;
    } else {
        next.segment_data = &state.segment_data + &data;
    }
    let draws = gibbs_fit_stats(&next.segment_prior, &next.segment_data, &mcfg.gibbs, &mut substream(cfg.seed, &[step as u64, CHAIN]))?;
    let p = next.segment_prior.dim;
    let ms = draws.mean_sigma();
    next.trace.steps.push(MvStepRecord {
        step,
        n_obs: batch.len(),
        decision,
        last_cp: next.last_cp,
        mean_mu: draws.mean_mu().iter().copied().collect(),
        mean_sigma: (0..p).map(|i| (0..p).map(|j| ms[(i, j)]).collect()).collect(),
        mu_interval: draws.mu_interval(0.1),
        sigma_interval: draws.sigma_interval(0.1),
    });
    next.draws = Some(draws);
    Ok(next)
}

/// One step of the multivariate test-then-update loop.
pub fn mv_step(state: &MvEngineState, batch: &MvBatch, cfg: &KlTestConfig, mcfg: &MvEngineConfig) -> Result<MvEngineState> {
    cfg.validate()?;
    mcfg.gibbs.validate()?;
    mv_step_inner(state, batch, cfg, mcfg).map_err(|e| e.at_step(state.step + 1))
}

pub fn mv_run(series: &[MvBatch], prior: NiwParams, cfg: &KlTestConfig, mcfg: &MvEngineConfig) -> Result<MvEngineState> {
    let mut state = MvEngineState::new(prior)?;
    for b in series {
        state = mv_step(&state, b, cfg, mcfg)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_match_scale_factor() {
        let draws = MvPosteriorDraws {
            mus: vec![DVector::zeros(2); 3],
            sigmas: vec![DMatrix::identity(2, 2); 3],
            retained: 3,
        };
        let prior = niw_moment_match(&draws, 6.0).unwrap();
        assert_eq!(prior.scale_matrix, DMatrix::identity(2, 2) * 3.0);
        assert_eq!(prior.mean_sigma(), DMatrix::identity(2, 2));
        assert_eq!(prior.kappa, 1.0);
    }

    #[test]
    fn moment_match_unit_factor_at_seven_dims() {
        let s0 = DMatrix::from_fn(7, 7, |i, j| if i == j { 2.0 } else { 0.3 });
        let draws = MvPosteriorDraws { mus: vec![DVector::zeros(7); 4], sigmas: vec![s0.clone(); 4], retained: 4 };
        let prior = niw_moment_match(&draws, 9.0).unwrap();
        assert!((&prior.scale_matrix - &s0).amax() < 1e-14);
        assert!((prior.mean_sigma() - s0).amax() < 1e-14);
    }

    #[test]
    fn draw_log_lik_matches_direct_density() {
        let mu = DVector::from_vec(vec![0.5, -1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let d = MvDraw::new(mu.clone(), sigma.clone()).unwrap();
        let batch = MvBatch::from_rows(&[vec![0.1, 0.2], vec![-1.0, 3.0]]).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let det = sigma.determinant();
        let direct: f64 = (0..2)
            .map(|i| {
                let r = batch.observations.row(i).transpose() - &mu;
                -LN_2PI - 0.5 * det.ln() - 0.5 * (r.transpose() * &inv * &r)[(0, 0)]
            })
            .sum();
        assert!((d.log_lik(&batch.stats()) - direct).abs() < 1e-12);
        let draws = ParamDraws::new(vec![d.clone(), d.clone()], Provenance::Mcmc).unwrap();
        let fast = MvNullModel::new(2, &draws).log_liks(&draws.draws, &batch.stats());
        assert!((fast[1] - direct).abs() < 1e-12);
    }

    #[test]
    fn inverse_wishart_mean() {
        let scale = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let dof = 8.0;
        let mut rng = substream(4, &[]);
        let n = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(dof, &scale, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expect = &scale / (dof - 3.0);
        assert!((mean - expect).amax() < 0.02, "mean mismatch");
    }

    #[test]
    fn rejects_bad_priors() {
        assert!(NiwParams::standard(3, 4.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(NiwParams::new(DVector::zeros(2), asym, 1.0, 5.0).is_err());
        assert!(GibbsConfig { iters: 10, burn: 10 }.validate().is_err());
    }
}
