// SPDX-License-Identifier: MIT OR Apache-2.0

//! Power / sample-size simulation study for the Beta-Bernoulli test.
//!
//! Each simulation draws two sample sizes uniformly from `1..=max_n` and a
//! success probability uniformly from (0, 1), then tests the second
//! Bernoulli sample against the posterior from the first. No change is
//! planted, so the acceptance fraction estimates `1 − α` and the log ratio
//! of the (reduced) sample sizes among accepted simulations should look
//! like a standard Laplace variable when power does not depend on sample
//! size.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ConjugatePosterior, SufficientStats};
use crate::kl::{conjugate_null_sample, kl_closed_form};
use crate::rng::{derive_key, substream, TIE_BREAK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyConfig {
    pub n_sims: usize,
    pub max_n: usize,
    pub alpha: f64,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for PowerStudyConfig {
    fn default() -> Self {
        PowerStudyConfig { n_sims: 10_000, max_n: 100, alpha: 0.2, mc_draws: 5000, seed: 1 }
    }
}

impl PowerStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sims < 1 {
            return Err(Error::Config("need at least one simulation".into()));
        }
        if self.max_n < 2 {
            return Err(Error::Config(format!("max_n must be at least 2, got {}", self.max_n)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.mc_draws < 2 {
            return Err(Error::Config("need at least 2 posterior draws".into()));
        }
        Ok(())
    }
}

/// One simulation of the study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub sim: usize,
    pub n1: usize,
    pub n2: usize,
    pub pi: f64,
    pub statistic: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub lower: f64,
    #[serde(with = "crate::serde_float::scalar")]
    pub upper: f64,
    pub accepted: bool,
    /// `ln(n1 − 1) − ln(n2 − 1)`, when both sizes exceed one.
    #[serde(rename = "Z")]
    pub z: Option<f64>,
}

/// One point of the empirical-CDF comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfGridPoint {
    pub z: f64,
    pub empirical: f64,
    pub expected: f64,
    pub band_lower: f64,
    pub band_upper: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCheck {
    pub passed: bool,
    /// Largest distance by which the empirical CDF leaves the band; 0 if it never does.
    pub max_band_violation: f64,
    pub sample_size: usize,
    pub grid: Vec<CdfGridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyResult {
    pub n_sims: usize,
    pub accepted_count: usize,
    pub z_values: Vec<f64>,
    pub cdf_check: CdfCheck,
    pub rows: Vec<SimRow>,
}

impl PowerStudyResult {
    pub fn acceptance_fraction(&self) -> f64 {
        self.accepted_count as f64 / self.n_sims as f64
    }
}

/// Standard double-exponential CDF.
pub fn laplace_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Grid of the CDF comparison: −2 to 2 in steps of 0.2.
pub fn cdf_grid() -> Vec<f64> {
    (-10..=10).map(|k| k as f64 * 0.2).collect()
}

/// z-quantile of the pointwise 99% band.
const Z_995: f64 = 2.575_829_303_548_901;

/// Compares the empirical CDF of `z_values` with the standard Laplace CDF
/// at every point of [`cdf_grid`], using the pointwise 99% binomial band
/// `F ± z_{0.995} √(F(1 − F)/N)`.
pub fn laplace_cdf_check(z_values: &[f64]) -> CdfCheck {
    let mut sorted = z_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let grid: Vec<CdfGridPoint> = cdf_grid()
        .into_iter()
        .map(|z| {
            let expected = laplace_cdf(z);
            let empirical = if n == 0 { f64::NAN } else { sorted.partition_point(|v| *v <= z) as f64 / n as f64 };
            let half = Z_995 * (expected * (1.0 - expected) / n as f64).sqrt();
            let (band_lower, band_upper) = (expected - half, expected + half);
            CdfGridPoint { z, empirical, expected, band_lower, band_upper, inside: empirical >= band_lower && empirical <= band_upper }
        })
        .collect();
    let max_band_violation = grid
        .iter()
        .map(|g| if g.empirical.is_nan() { f64::INFINITY } else { (g.band_lower - g.empirical).max(g.empirical - g.band_upper).max(0.0) })
        .fold(0.0, f64::max);
    CdfCheck { passed: n > 0 && grid.iter().all(|g| g.inside), max_band_violation, sample_size: n, grid }
}

/// `ln n1* − ln n2*` with `n* = n − 1`, or `None` if either is zero.
pub fn log_size_ratio(n1: usize, n2: usize) -> Option<f64> {
    if n1 > 1 && n2 > 1 {
        Some(((n1 - 1) as f64).ln() - ((n2 - 1) as f64).ln())
    } else {
        None
    }
}

fn bernoulli_total<R: Rng>(n: usize, pi: f64, rng: &mut R) -> f64 {
    (0..n).filter(|_| rng.random::<f64>() < pi).count() as f64
}

fn one_sim(cfg: &PowerStudyConfig, sim: usize) -> Result<SimRow> {
    let mut rng = substream(cfg.seed, &[sim as u64]);
    let n1 = rng.random_range(1..=cfg.max_n);
    let n2 = rng.random_range(1..=cfg.max_n);
    let pi: f64 = rng.random();
    let x1 = bernoulli_total(n1, pi, &mut rng);
    let x2 = bernoulli_total(n2, pi, &mut rng);
    let post = ConjugatePosterior::beta(1.0 + x1, 1.0 + n1 as f64 - x1)?;
    let statistic = kl_closed_form(&post, &SufficientStats::new(n2 as f64, x2, 0.0))?;
    let (lower, upper, accepted) = if cfg.alpha == 0.0 {
        (f64::NEG_INFINITY, f64::INFINITY, true)
    } else {
        let null = conjugate_null_sample(&post, n2, cfg.mc_draws, derive_key(cfg.seed, &[sim as u64]), 0)?;
        let tie: f64 = substream(cfg.seed, &[sim as u64, TIE_BREAK]).random();
        let d = null.decide(statistic, cfg.alpha, tie);
        (d.lower, d.upper, !d.detected)
    };
    Ok(SimRow { sim, n1, n2, pi, statistic, lower, upper, accepted, z: log_size_ratio(n1, n2) })
}

/// Runs the study. Simulation `s` uses only the substreams keyed by
/// `(seed, s, ..)`, so results do not depend on scheduling.
pub fn power_study(cfg: &PowerStudyConfig) -> Result<PowerStudyResult> {
    cfg.validate()?;
    let rows = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| one_sim(cfg, s).map_err(|e| e.at_step(s)))
        .collect::<Result<Vec<SimRow>>>()?;
    let accepted_count = rows.iter().filter(|r| r.accepted).count();
    let z_values: Vec<f64> = rows.iter().filter(|r| r.accepted).filter_map(|r| r.z).collect();
    let cdf_check = laplace_cdf_check(&z_values);
    Ok(PowerStudyResult { n_sims: cfg.n_sims, accepted_count, z_values, cdf_check, rows })
}
