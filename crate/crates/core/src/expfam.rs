// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conjugate exponential-family machinery.
//!
//! Each family is written in canonical form
//! `P(y | θ) = a(y) exp(y·θ − b(θ))` with conjugate density
//! `c(n, S) exp(S·θ − n b(θ))`. The hyperparameters `(n, S)` are stored as
//! [`SufficientStats`] and grow additively as data are absorbed.
//!
//! | family    | θ                 | b(θ)                 | posterior            |
//! |-----------|-------------------|----------------------|----------------------|
//! | Bernoulli | logit π           | ln(1 + e^θ)          | Beta(S, n − S)       |
//! | Poisson   | ln λ              | e^θ                  | Gamma(S, rate n)     |
//! | Gaussian  | (λμ, −λ/2)        | λμ²/2 − ½ ln λ       | Normal-Gamma         |
//!
//! For the Gaussian family the density is taken with respect to `dμ dλ`
//! and carries an extra fixed factor `λ^r` (the `shape_offset`), so that
//! the location multiplier `κ = n` and the precision shape
//! `(n + 1)/2 + r` can be set independently. The offset does not depend
//! on `(n, S)` and therefore leaves every derivative identity of the
//! log-normalizer intact.

use rand::Rng;
use rand_distr::{Beta, Binomial, ChiSquared, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Sub};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_beta, ln_gamma, trigamma};

/// Hyperparameters must exceed this to count as proper.
pub const PROPRIETY_EPS: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Bernoulli,
    Poisson,
    #[serde(rename = "gaussian-normal-gamma", alias = "gaussian")]
    Gaussian,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [FamilyKind::Bernoulli, FamilyKind::Poisson, FamilyKind::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Gaussian => "gaussian",
        }
    }

    /// Length of the sufficient-statistic vector `S`.
    pub fn stat_dim(self) -> usize {
        match self {
            FamilyKind::Gaussian => 2,
            _ => 1,
        }
    }

    /// Sufficient statistics of a batch, validating every observation.
    pub fn batch_stats(self, batch: &[f64]) -> Result<SufficientStats> {
        let mut out = SufficientStats::zero();
        for (index, &y) in batch.iter().enumerate() {
            self.check_observation(index, y)?;
            out.n += 1.0;
            out.s1 += y;
            if self == FamilyKind::Gaussian {
                out.s2 += y * y;
            }
        }
        Ok(out)
    }

    fn check_observation(self, index: usize, y: f64) -> Result<()> {
        let ok = match self {
            FamilyKind::Bernoulli => y == 0.0 || y == 1.0,
            FamilyKind::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
            FamilyKind::Gaussian => y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            let expected = match self {
                FamilyKind::Bernoulli => "0 or 1",
                FamilyKind::Poisson => "a nonnegative integer count",
                FamilyKind::Gaussian => "a finite real",
            };
            Err(Error::Domain {
                index,
                message: format!("{y} is not {expected} ({} family)", self.name()),
            })
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Effective sample size `n` and statistic `S = (s1, s2)`.
///
/// `s2` (the sum of squares) is used by the Gaussian family only and stays
/// zero for the scalar-statistic families.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SufficientStats {
    pub n: f64,
    pub s1: f64,
    #[serde(default)]
    pub s2: f64,
}

impl SufficientStats {
    pub const fn zero() -> Self {
        SufficientStats { n: 0.0, s1: 0.0, s2: 0.0 }
    }

    pub const fn new(n: f64, s1: f64, s2: f64) -> Self {
        SufficientStats { n, s1, s2 }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0.0 && self.s1 == 0.0 && self.s2 == 0.0
    }
}

impl Add for SufficientStats {
    type Output = SufficientStats;
    fn add(self, o: SufficientStats) -> SufficientStats {
        SufficientStats { n: self.n + o.n, s1: self.s1 + o.s1, s2: self.s2 + o.s2 }
    }
}

impl AddAssign for SufficientStats {
    fn add_assign(&mut self, o: SufficientStats) {
        *self = *self + o;
    }
}

impl Sub for SufficientStats {
    type Output = SufficientStats;
    fn sub(self, o: SufficientStats) -> SufficientStats {
        SufficientStats { n: self.n - o.n, s1: self.s1 - o.s1, s2: self.s2 - o.s2 }
    }
}

/// `stats` plus the sufficient statistics of `batch`.
pub fn accumulate(stats: SufficientStats, batch: &[f64], kind: FamilyKind) -> Result<SufficientStats> {
    Ok(stats + kind.batch_stats(batch)?)
}

/// Normal-inverse-gamma hyperparameters:
/// `σ² ~ IG(shape, rate)`, `μ | σ² ~ N(location, σ²/kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalInverseGamma {
    pub location: f64,
    pub kappa: f64,
    pub shape: f64,
    pub rate: f64,
}

/// A parameter value drawn from a conjugate posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyParam {
    Probability(f64),
    Rate(f64),
    MeanVariance { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    pub kind: FamilyKind,
    pub stats: SufficientStats,
    /// Exponent `r` of the extra `λ^r` base-measure factor (Gaussian only).
    #[serde(default)]
    pub shape_offset: f64,
}

/// First two posterior moments of the canonical and mean-value parameters.
///
/// Moments that do not exist (for example `E[σ²]` when the precision shape
/// is at most one) are reported as `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    /// `E[θ]`, one entry per component of the canonical parameter.
    pub mean_theta: Vec<f64>,
    /// `V[θ]`, componentwise.
    pub var_theta: Vec<f64>,
    /// `E[b(θ)]`.
    pub mean_b: f64,
    /// `E[π]`, `E[λ]`, or `(E[μ], E[σ²])`.
    #[serde(with = "crate::serde_float::vector")]
    pub mean_natural: Vec<f64>,
    #[serde(with = "crate::serde_float::vector")]
    pub var_natural: Vec<f64>,
}

impl ConjugatePosterior {
    pub fn new(kind: FamilyKind, stats: SufficientStats) -> Result<Self> {
        let p = ConjugatePosterior { kind, stats, shape_offset: 0.0 };
        p.validate()?;
        Ok(p)
    }

    /// Beta(a, b) on the success probability.
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::new(FamilyKind::Bernoulli, SufficientStats::new(a + b, a, 0.0))
    }

    /// Gamma with the given shape and rate on the Poisson mean.
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(FamilyKind::Poisson, SufficientStats::new(rate, shape, 0.0))
    }

    pub fn normal_inverse_gamma(nig: NormalInverseGamma) -> Result<Self> {
        let NormalInverseGamma { location, kappa, shape, rate } = nig;
        let p = ConjugatePosterior {
            kind: FamilyKind::Gaussian,
            stats: SufficientStats::new(kappa, kappa * location, 2.0 * rate + kappa * location * location),
            shape_offset: shape - 0.5 * (kappa + 1.0),
        };
        p.validate()?;
        Ok(p)
    }

    /// Default initial priors: Beta(1,1), Ga(1,1), and for the Gaussian
    /// family `μ ~ N(0, σ²)`, `σ² ~ IG(ν/2, ν/2)`.
    pub fn default_prior(kind: FamilyKind, nu: f64) -> Result<Self> {
        match kind {
            FamilyKind::Bernoulli => Self::beta(1.0, 1.0),
            FamilyKind::Poisson => Self::gamma(1.0, 1.0),
            FamilyKind::Gaussian => Self::transfer_nig(0.0, 1.0, nu),
        }
    }

    /// `μ ~ N(mean, σ²)`, `σ² ~ IG(ν/2, ν·scale/2)`.
    pub fn transfer_nig(mean: f64, scale: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Config(format!("shape coefficient nu must be positive, got {nu}")));
        }
        Self::normal_inverse_gamma(NormalInverseGamma {
            location: mean,
            kappa: 1.0,
            shape: 0.5 * nu,
            rate: 0.5 * nu * scale,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let SufficientStats { n, s1, s2 } = self.stats;
        if ![n, s1, s2, self.shape_offset].iter().all(|v| v.is_finite()) {
            return Err(Error::Improper(format!("nonfinite hyperparameters {:?}", self.stats)));
        }
        let bad = |what: &str, v: f64| Err(Error::Improper(format!("{} {what} = {v} must exceed {PROPRIETY_EPS}", self.kind)));
        match self.kind {
            FamilyKind::Bernoulli => {
                if s1 <= PROPRIETY_EPS {
                    return bad("S", s1);
                }
                if n - s1 <= PROPRIETY_EPS {
                    return bad("n - S", n - s1);
                }
            }
            FamilyKind::Poisson => {
                if s1 <= PROPRIETY_EPS {
                    return bad("S", s1);
                }
                if n <= PROPRIETY_EPS {
                    return bad("n", n);
                }
            }
            FamilyKind::Gaussian => {
                if n <= PROPRIETY_EPS {
                    return bad("n", n);
                }
                let nig = self.nig_unchecked();
                if nig.rate <= PROPRIETY_EPS {
                    return bad("S2 - S1^2/n", 2.0 * nig.rate);
                }
                if nig.shape <= PROPRIETY_EPS {
                    return bad("precision shape", nig.shape);
                }
            }
        }
        Ok(())
    }

    fn nig_unchecked(&self) -> NormalInverseGamma {
        let SufficientStats { n, s1, s2 } = self.stats;
        let location = s1 / n;
        NormalInverseGamma {
            location,
            kappa: n,
            shape: 0.5 * (n + 1.0) + self.shape_offset,
            rate: 0.5 * (s2 - s1 * location),
        }
    }

    /// Normal-inverse-gamma view of a Gaussian posterior.
    pub fn nig(&self) -> Result<NormalInverseGamma> {
        if self.kind != FamilyKind::Gaussian {
            return Err(Error::Config(format!("{} posterior has no normal-inverse-gamma view", self.kind)));
        }
        self.validate()?;
        Ok(self.nig_unchecked())
    }

    /// Adds statistics without validating the result.
    pub fn absorb(&self, data: SufficientStats) -> ConjugatePosterior {
        ConjugatePosterior { stats: self.stats + data, ..*self }
    }

    pub fn bayes_update(&self, batch: &[f64]) -> Result<ConjugatePosterior> {
        let data = self.kind.batch_stats(batch)?;
        let out = self.absorb(data);
        out.validate()?;
        Ok(out)
    }

    /// `ln c(n, S)`.
    pub fn log_norm(&self) -> Result<f64> {
        self.validate()?;
        let v = self.log_norm_unchecked();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numeric("log normalizer", format!("{v} for {:?}", self.stats)))
        }
    }

    pub(crate) fn log_norm_unchecked(&self) -> f64 {
        let SufficientStats { n, s1, .. } = self.stats;
        match self.kind {
            FamilyKind::Bernoulli => -ln_beta(s1, n - s1),
            FamilyKind::Poisson => s1 * n.ln() - ln_gamma(s1),
            FamilyKind::Gaussian => {
                let g = self.nig_unchecked();
                -(0.5 * (LN_2PI - n.ln()) + ln_gamma(g.shape) - g.shape * g.rate.ln())
            }
        }
    }

    pub fn moments(&self) -> Result<PosteriorMoments> {
        self.validate()?;
        let SufficientStats { n, s1, .. } = self.stats;
        let m = match self.kind {
            FamilyKind::Bernoulli => {
                let (a, b) = (s1, n - s1);
                let mean = a / n;
                PosteriorMoments {
                    mean_theta: vec![digamma(a) - digamma(b)],
                    var_theta: vec![trigamma(a) + trigamma(b)],
                    mean_b: digamma(n) - digamma(b),
                    mean_natural: vec![mean],
                    var_natural: vec![a * b / (n * n * (n + 1.0))],
                }
            }
            FamilyKind::Poisson => PosteriorMoments {
                mean_theta: vec![digamma(s1) - n.ln()],
                var_theta: vec![trigamma(s1)],
                mean_b: s1 / n,
                mean_natural: vec![s1 / n],
                var_natural: vec![s1 / (n * n)],
            },
            FamilyKind::Gaussian => {
                let NormalInverseGamma { location: mu, kappa, shape: a, rate: r } = self.nig_unchecked();
                let mean_prec = a / r;
                let mean_sigma2 = if a > 1.0 { r / (a - 1.0) } else { f64::INFINITY };
                let var_mu = if a > 1.0 { r / ((a - 1.0) * kappa) } else { f64::INFINITY };
                let var_sigma2 = if a > 2.0 { r * r / ((a - 1.0).powi(2) * (a - 2.0)) } else { f64::INFINITY };
                PosteriorMoments {
                    mean_theta: vec![mean_prec * mu, -0.5 * mean_prec],
                    var_theta: vec![mu * mu * a / (r * r) + a / (kappa * r), a / (4.0 * r * r)],
                    mean_b: 0.5 * (mu * mu * mean_prec + 1.0 / kappa) - 0.5 * (digamma(a) - r.ln()),
                    mean_natural: vec![mu, mean_sigma2],
                    var_natural: vec![var_mu, var_sigma2],
                }
            }
        };
        Ok(m)
    }

    /// Draws one parameter value from this density.
    pub fn sample_param<R: Rng + ?Sized>(&self, rng: &mut R) -> FamilyParam {
        let SufficientStats { n, s1, .. } = self.stats;
        match self.kind {
            FamilyKind::Bernoulli => {
                let d = Beta::new(s1, n - s1).expect("validated beta parameters");
                FamilyParam::Probability(d.sample(rng))
            }
            FamilyKind::Poisson => {
                let d = Gamma::new(s1, 1.0 / n).expect("validated gamma parameters");
                FamilyParam::Rate(d.sample(rng))
            }
            FamilyKind::Gaussian => {
                let g = self.nig_unchecked();
                let prec = Gamma::new(g.shape, 1.0 / g.rate).expect("validated gamma parameters").sample(rng);
                let variance = 1.0 / prec;
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                FamilyParam::MeanVariance { mean: g.location + z * (variance / g.kappa).sqrt(), variance }
            }
        }
    }

    pub fn sample_params<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<FamilyParam> {
        (0..count).map(|_| self.sample_param(rng)).collect()
    }
}

impl FamilyParam {
    /// Samples the sufficient statistics of a batch of `len` observations.
    pub fn sample_batch_stats<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> SufficientStats {
        let k = len as f64;
        match *self {
            FamilyParam::Probability(p) => {
                let successes = Binomial::new(len as u64, p.clamp(0.0, 1.0)).expect("probability in [0,1]").sample(rng);
                SufficientStats::new(k, successes as f64, 0.0)
            }
            FamilyParam::Rate(lambda) => {
                let mean = lambda * k;
                let total = if mean > 0.0 && mean.is_finite() {
                    Poisson::new(mean).expect("positive poisson mean").sample(rng)
                } else {
                    0.0
                };
                SufficientStats::new(k, total, 0.0)
            }
            FamilyParam::MeanVariance { mean, variance } => {
                if len == 0 {
                    return SufficientStats::zero();
                }
                let sd = variance.sqrt();
                let ybar = Normal::new(mean, sd / k.sqrt()).expect("finite normal").sample(rng);
                let within = if len > 1 {
                    variance * ChiSquared::new(k - 1.0).expect("positive dof").sample(rng)
                } else {
                    0.0
                };
                SufficientStats::new(k, k * ybar, within + k * ybar * ybar)
            }
        }
    }

    /// Samples `len` individual observations.
    pub fn sample_batch<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            FamilyParam::Probability(p) => (0..len).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect(),
            FamilyParam::Rate(lambda) => {
                if lambda > 0.0 {
                    let d = Poisson::new(lambda).expect("positive poisson mean");
                    (0..len).map(|_| d.sample(rng)).collect()
                } else {
                    vec![0.0; len]
                }
            }
            FamilyParam::MeanVariance { mean, variance } => {
                let d = Normal::new(mean, variance.sqrt()).expect("finite normal");
                (0..len).map(|_| d.sample(rng)).collect()
            }
        }
    }

    /// `ln P(batch | θ)` from the batch's sufficient statistics, omitting
    /// the `ln a(y)` terms, which do not depend on θ.
    pub fn log_lik(&self, data: &SufficientStats) -> f64 {
        let SufficientStats { n, s1, s2 } = *data;
        match *self {
            FamilyParam::Probability(p) => {
                let mut ll = 0.0;
                if s1 > 0.0 {
                    ll += s1 * p.ln();
                }
                if n - s1 > 0.0 {
                    ll += (n - s1) * (-p).ln_1p();
                }
                ll
            }
            FamilyParam::Rate(lambda) => {
                let mut ll = -n * lambda;
                if s1 > 0.0 {
                    ll += s1 * lambda.ln();
                }
                ll
            }
            FamilyParam::MeanVariance { mean, variance } => {
                let ss = s2 - 2.0 * mean * s1 + n * mean * mean;
                -0.5 * n * variance.ln() - 0.5 * ss / variance
            }
        }
    }
}

/// Conjugate prior obtained by matching the first two marginal moments of a
/// posterior. For the Gaussian family `aux` carries the fixed shape
/// coefficient ν.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferPriorParams {
    pub kind: FamilyKind,
    pub stats: SufficientStats,
    pub aux: Option<f64>,
}

impl TransferPriorParams {
    pub fn to_posterior(&self) -> Result<ConjugatePosterior> {
        let shape_offset = match (self.kind, self.aux) {
            (FamilyKind::Gaussian, Some(nu)) => 0.5 * nu - 0.5 * (self.stats.n + 1.0),
            (FamilyKind::Gaussian, None) => 0.0,
            _ => 0.0,
        };
        let p = ConjugatePosterior { kind: self.kind, stats: self.stats, shape_offset };
        p.validate()?;
        Ok(p)
    }
}

/// Beta(a, b) with mean `m` and variance `v`.
pub fn beta_from_moments(m: f64, v: f64) -> Result<(f64, f64)> {
    if !(m > 0.0 && m < 1.0) || !(v > 0.0) || v >= m * (1.0 - m) {
        return Err(Error::DegenerateMoments(format!(
            "no beta density has mean {m} and variance {v} (need 0 < v < m(1-m))"
        )));
    }
    let k = m * (1.0 - m) / v - 1.0;
    Ok((m * k, (1.0 - m) * k))
}

/// Gamma (shape, rate) with mean `m` and variance `v`.
pub fn gamma_from_moments(m: f64, v: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) || !(v > 0.0) || !m.is_finite() || !v.is_finite() {
        return Err(Error::DegenerateMoments(format!("no gamma density has mean {m} and variance {v}")));
    }
    Ok((m * m / v, m / v))
}

/// Transfer prior matching the first two marginal moments of `post`.
///
/// Gaussian posteriors map to `μ ~ N(E[μ], σ²)`, `σ² ~ IG(ν/2, ν E[σ²]/2)`
/// and require `aux = Some(ν)`.
pub fn moment_match(post: &ConjugatePosterior, aux: Option<f64>) -> Result<TransferPriorParams> {
    let mom = post.moments()?;
    let stats = match post.kind {
        FamilyKind::Bernoulli => {
            let (a, b) = beta_from_moments(mom.mean_natural[0], mom.var_natural[0])?;
            SufficientStats::new(a + b, a, 0.0)
        }
        FamilyKind::Poisson => {
            let (shape, rate) = gamma_from_moments(mom.mean_natural[0], mom.var_natural[0])?;
            SufficientStats::new(rate, shape, 0.0)
        }
        FamilyKind::Gaussian => {
            let nu = match aux {
                Some(nu) if nu > 2.0 && nu.is_finite() => nu,
                Some(nu) => return Err(Error::Config(format!("transfer prior needs nu > 2, got {nu}"))),
                None => return Err(Error::Config("gaussian transfer prior needs the shape coefficient nu".into())),
            };
            let (mu_hat, sigma2_hat) = (mom.mean_natural[0], mom.mean_natural[1]);
            if !sigma2_hat.is_finite() {
                return Err(Error::DegenerateMoments("posterior mean of the variance does not exist".into()));
            }
            SufficientStats::new(1.0, mu_hat, nu * sigma2_hat + mu_hat * mu_hat)
        }
    };
    let out = TransferPriorParams { kind: post.kind, stats, aux: if post.kind == FamilyKind::Gaussian { aux } else { None } };
    out.to_posterior()?;
    Ok(out)
}

pub fn bayes_update(post: &ConjugatePosterior, batch: &[f64]) -> Result<ConjugatePosterior> {
    post.bayes_update(batch)
}

pub fn posterior_moments(post: &ConjugatePosterior) -> Result<PosteriorMoments> {
    post.moments()
}

pub fn log_norm(post: &ConjugatePosterior) -> Result<f64> {
    post.log_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn stats(n: f64, s1: f64, s2: f64) -> SufficientStats {
        SufficientStats::new(n, s1, s2)
    }

    #[test]
    fn accumulate_examples() {
        let b = accumulate(stats(2.0, 1.0, 0.0), &[1.0, 0.0, 1.0], FamilyKind::Bernoulli).unwrap();
        assert_eq!(b, stats(5.0, 3.0, 0.0));
        let p = accumulate(stats(1.0, 2.0, 0.0), &[4.0], FamilyKind::Poisson).unwrap();
        assert_eq!(p, stats(2.0, 6.0, 0.0));
        let g = accumulate(stats(1.0, 0.0, 1.0), &[2.0], FamilyKind::Gaussian).unwrap();
        assert_eq!(g, stats(2.0, 2.0, 5.0));
    }

    #[test]
    fn accumulate_rejects_bad_observations_by_index() {
        let e = accumulate(SufficientStats::zero(), &[1.0, 0.0, 0.5], FamilyKind::Bernoulli).unwrap_err();
        assert!(matches!(e, Error::Domain { index: 2, .. }), "{e}");
        let e = accumulate(SufficientStats::zero(), &[3.0, -1.0], FamilyKind::Poisson).unwrap_err();
        assert!(matches!(e, Error::Domain { index: 1, .. }));
        let e = accumulate(SufficientStats::zero(), &[2.5], FamilyKind::Poisson).unwrap_err();
        assert!(matches!(e, Error::Domain { index: 0, .. }));
        let e = accumulate(SufficientStats::zero(), &[0.0, f64::NAN], FamilyKind::Gaussian).unwrap_err();
        assert!(matches!(e, Error::Domain { index: 1, .. }));
    }

    #[test]
    fn bayes_update_examples() {
        let prior = ConjugatePosterior::beta(1.0, 1.0).unwrap();
        let post = prior.bayes_update(&[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(post.stats, stats(5.0, 3.0, 0.0));
        assert_eq!(prior.stats, stats(2.0, 1.0, 0.0));

        let g = ConjugatePosterior::gamma(2.0, 1.0).unwrap().bayes_update(&[4.0]).unwrap();
        assert_eq!(g.stats, stats(2.0, 6.0, 0.0));

        for kind in FamilyKind::ALL {
            let p = ConjugatePosterior::default_prior(kind, 5.0).unwrap();
            assert_eq!(p.bayes_update(&[]).unwrap(), p);
        }
    }

    #[test]
    fn moments_examples() {
        let m = ConjugatePosterior::beta(1.0, 1.0).unwrap().moments().unwrap();
        assert_eq!(m.mean_theta[0], 0.0);
        let m = ConjugatePosterior::beta(3.0, 2.0).unwrap().moments().unwrap();
        assert!((m.mean_natural[0] - 0.6).abs() < 1e-15);
        let m = ConjugatePosterior::gamma(6.0, 2.0).unwrap().moments().unwrap();
        assert_eq!(m.mean_natural[0], 3.0);
        assert_eq!(m.mean_b, 3.0);
    }

    #[test]
    fn log_norm_examples() {
        assert!(ConjugatePosterior::beta(1.0, 1.0).unwrap().log_norm().unwrap().abs() < 1e-14);
        assert!(ConjugatePosterior::gamma(2.0, 1.0).unwrap().log_norm().unwrap().abs() < 1e-14);
    }

    /// 2-D quadrature of ∫∫ λ^{n/2 + r} exp(S1 λμ − S2 λ/2 − n λ μ²/2) dμ dλ,
    /// mapping λ = e^u and integrating μ on a wide window at each λ.
    fn gaussian_normalizer_by_quadrature(p: &ConjugatePosterior) -> f64 {
        let SufficientStats { n, s1, s2 } = p.stats;
        let r = p.shape_offset;
        let m = s1 / n;
        let gl = gauss_legendre_20();
        let (u_lo, u_hi, u_panels) = (-25.0, 8.0, 330);
        let mut total = 0.0;
        let hu = (u_hi - u_lo) / u_panels as f64;
        for pu in 0..u_panels {
            let a = u_lo + pu as f64 * hu;
            for &(xu, wu) in &gl {
                let u = a + 0.5 * hu * (xu + 1.0);
                let lam: f64 = u.exp();
                let half = 14.0 / (n * lam).sqrt();
                let (mu_panels, hm) = (28, 2.0 * half / 28.0);
                let mut inner = 0.0;
                for pm in 0..mu_panels {
                    let b = m - half + pm as f64 * hm;
                    for &(xm, wm) in &gl {
                        let mu = b + 0.5 * hm * (xm + 1.0);
                        let e = s1 * lam * mu - s2 * lam / 2.0 - n * lam * mu * mu / 2.0 + (n / 2.0 + r) * u;
                        inner += 0.5 * hm * wm * e.exp();
                    }
                }
                total += 0.5 * hu * wu * inner * lam;
            }
        }
        total
    }

    pub(crate) fn gauss_legendre_20() -> Vec<(f64, f64)> {
        // Golub-Welsch would be overkill; Newton on P_20.
        let n = 20;
        let mut out = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    #[test]
    fn gaussian_log_norm_matches_quadrature() {
        let cases = [
            ConjugatePosterior { kind: FamilyKind::Gaussian, stats: stats(1.0, 0.0, 1.0), shape_offset: 0.0 },
            ConjugatePosterior { kind: FamilyKind::Gaussian, stats: stats(4.0, 2.0, 7.0), shape_offset: 0.0 },
            ConjugatePosterior::transfer_nig(0.5, 2.0, 5.0).unwrap(),
        ];
        for p in cases {
            let z = gaussian_normalizer_by_quadrature(&p);
            let lc = p.log_norm().unwrap();
            assert!((lc + z.ln()).abs() < 1e-8, "{:?}: {} vs {}", p.stats, lc, -z.ln());
        }
    }

    #[test]
    fn improper_inputs_are_rejected() {
        assert!(ConjugatePosterior::beta(0.0, 1.0).is_err());
        assert!(ConjugatePosterior::beta(1.0, 1e-13).is_err());
        assert!(ConjugatePosterior::gamma(1.0, 0.0).is_err());
        let bad = ConjugatePosterior { kind: FamilyKind::Gaussian, stats: stats(2.0, 2.0, 2.0), shape_offset: 0.0 };
        assert!(matches!(bad.moments(), Err(Error::Improper(_))));
        assert!(bad.log_norm().is_err());
    }

    #[test]
    fn moment_match_examples() {
        let (a, b) = beta_from_moments(0.3, 0.01).unwrap();
        // recompute mean and variance from the returned Beta
        assert!((a / (a + b) - 0.3).abs() < 1e-12);
        assert!((a * b / ((a + b).powi(2) * (a + b + 1.0)) - 0.01).abs() < 1e-12);
        assert!((a - 6.0).abs() < 1e-12 && (b - 14.0).abs() < 1e-12);

        let (shape, rate) = gamma_from_moments(3.0, 1.5).unwrap();
        assert!((shape / rate - 3.0).abs() < 1e-12 && (shape / (rate * rate) - 1.5).abs() < 1e-12);
        assert!((shape - 6.0).abs() < 1e-12 && (rate - 2.0).abs() < 1e-12);

        let p = ConjugatePosterior::beta(2.0, 2.0).unwrap();
        let t = moment_match(&p, None).unwrap();
        assert!((t.stats.s1 - 2.0).abs() < 1e-12 && (t.stats.n - 4.0).abs() < 1e-12);

        assert!(matches!(beta_from_moments(0.5, 0.25), Err(Error::DegenerateMoments(_))));
    }

    #[test]
    fn gaussian_moment_match_follows_transfer_construction() {
        let post = ConjugatePosterior::transfer_nig(0.0, 1.0, 5.0).unwrap()
            .bayes_update(&[0.3, -1.2, 2.0, 0.7, 0.1]).unwrap();
        let mom = post.moments().unwrap();
        assert!(moment_match(&post, None).is_err());
        assert!(moment_match(&post, Some(2.0)).is_err());
        let t = moment_match(&post, Some(5.0)).unwrap().to_posterior().unwrap();
        let nig = t.nig().unwrap();
        assert!((nig.location - mom.mean_natural[0]).abs() < 1e-12);
        assert!((nig.kappa - 1.0).abs() < 1e-15);
        assert!((nig.shape - 2.5).abs() < 1e-12);
        // prior expectation of the variance is (ν/2)/(ν/2 − 1) σ̂²
        let tm = t.moments().unwrap();
        assert!((tm.mean_natural[1] - 2.5 / 1.5 * mom.mean_natural[1]).abs() < 1e-10 * mom.mean_natural[1]);
    }

    #[test]
    fn nig_round_trip() {
        let nig = NormalInverseGamma { location: -0.4, kappa: 2.5, shape: 3.2, rate: 1.7 };
        let back = ConjugatePosterior::normal_inverse_gamma(nig).unwrap().nig().unwrap();
        assert!((back.location - nig.location).abs() < 1e-14);
        assert!((back.kappa - nig.kappa).abs() < 1e-14);
        assert!((back.shape - nig.shape).abs() < 1e-14);
        assert!((back.rate - nig.rate).abs() < 1e-14);
    }

    #[test]
    fn sampled_params_match_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let post = ConjugatePosterior::transfer_nig(1.0, 2.0, 7.0).unwrap().bayes_update(&[0.5, 1.5, 2.5]).unwrap();
        let mom = post.moments().unwrap();
        let draws = post.sample_params(200_000, &mut rng);
        let (mut mu, mut s2) = (0.0, 0.0);
        for d in &draws {
            if let FamilyParam::MeanVariance { mean, variance } = d {
                mu += mean;
                s2 += variance;
            }
        }
        let k = draws.len() as f64;
        let se_mu = (mom.var_natural[0] / k).sqrt();
        let se_s2 = (mom.var_natural[1] / k).sqrt();
        assert!((mu / k - mom.mean_natural[0]).abs() < 4.0 * se_mu);
        assert!((s2 / k - mom.mean_natural[1]).abs() < 4.0 * se_s2);
    }

    fn random_posterior(kind: FamilyKind, a: f64, b: f64, c: f64) -> ConjugatePosterior {
        match kind {
            FamilyKind::Bernoulli => ConjugatePosterior::beta(a, b).unwrap(),
            FamilyKind::Poisson => ConjugatePosterior::gamma(a, b).unwrap(),
            FamilyKind::Gaussian => ConjugatePosterior::normal_inverse_gamma(NormalInverseGamma {
                location: c,
                kappa: a,
                shape: b + 0.5,
                rate: a * 0.7 + 0.1,
            })
            .unwrap(),
        }
    }

    fn fd_h(p: &ConjugatePosterior, dn: f64, ds1: f64, ds2: f64) -> f64 {
        let q = p.absorb(stats(dn, ds1, ds2));
        -q.log_norm().unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        // E[θ] = ∂H/∂S and E[b(θ)] = −∂H/∂n with H = −ln c.
        #[test]
        fn derivative_consistency(a in 0.5f64..40.0, b in 0.5f64..40.0, c in -3.0f64..3.0, k in 0usize..3) {
            let kind = FamilyKind::ALL[k];
            let p = random_posterior(kind, a, b, c);
            let m = p.moments().unwrap();
            let h = 1e-5;
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
            let d_s1 = (fd_h(&p, 0.0, h, 0.0) - fd_h(&p, 0.0, -h, 0.0)) / (2.0 * h);
            prop_assert!(rel(m.mean_theta[0], d_s1) < 1e-6, "dS1 {} vs {}", m.mean_theta[0], d_s1);
            if kind == FamilyKind::Gaussian {
                let d_s2 = (fd_h(&p, 0.0, 0.0, h) - fd_h(&p, 0.0, 0.0, -h)) / (2.0 * h);
                prop_assert!(rel(m.mean_theta[1], d_s2) < 1e-6, "dS2 {} vs {}", m.mean_theta[1], d_s2);
            }
            let d_n = (fd_h(&p, h, 0.0, 0.0) - fd_h(&p, -h, 0.0, 0.0)) / (2.0 * h);
            prop_assert!(rel(m.mean_b, -d_n) < 1e-6, "dn {} vs {}", m.mean_b, -d_n);
            let h2 = 1e-3;
            let d2 = (fd_h(&p, 0.0, h2, 0.0) - 2.0 * fd_h(&p, 0.0, 0.0, 0.0) + fd_h(&p, 0.0, -h2, 0.0)) / (h2 * h2);
            prop_assert!(rel(m.var_theta[0], d2) < 1e-3, "d2S {} vs {}", m.var_theta[0], d2);
        }

        #[test]
        fn moments_satisfy_invariants(a in 0.5f64..40.0, b in 0.5f64..40.0, c in -3.0f64..3.0, k in 0usize..3) {
            let p = random_posterior(FamilyKind::ALL[k], a, b, c);
            let m = p.moments().unwrap();
            prop_assert!(m.var_theta.iter().all(|v| *v > 0.0));
            prop_assert!(m.var_natural.iter().all(|v| *v > 0.0));
            if p.kind == FamilyKind::Bernoulli {
                prop_assert!(m.mean_natural[0] > 0.0 && m.mean_natural[0] < 1.0);
            }
        }

        #[test]
        fn moment_match_round_trip(a in 0.5f64..40.0, b in 0.5f64..40.0, k in 0usize..2) {
            let p = random_posterior(FamilyKind::ALL[k], a, b, 0.0);
            let m = p.moments().unwrap();
            let t = moment_match(&p, None).unwrap().to_posterior().unwrap();
            let mt = t.moments().unwrap();
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
            prop_assert!(rel(mt.mean_natural[0], m.mean_natural[0]) < 1e-10);
            prop_assert!(rel(mt.var_natural[0], m.var_natural[0]) < 1e-10);
        }

        #[test]
        fn updates_are_additive(
            xs in proptest::collection::vec(0u8..2, 0..30),
            ys in proptest::collection::vec(0u8..2, 0..30),
            k in 0usize..3,
        ) {
            let kind = FamilyKind::ALL[k];
            let p = ConjugatePosterior::default_prior(kind, 4.0).unwrap();
            let a: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = ys.iter().map(|&v| v as f64).collect();
            let both: Vec<f64> = a.iter().chain(&b).copied().collect();
            let seq = p.bayes_update(&a).unwrap().bayes_update(&b).unwrap();
            let once = p.bayes_update(&both).unwrap();
            prop_assert_eq!(seq.stats, once.stats);
        }
    }
}
