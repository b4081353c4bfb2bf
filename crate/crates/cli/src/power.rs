// SPDX-License-Identifier: MIT OR Apache-2.0

use clap::Args;
use klcp_core::sim::{power_study, PowerStudyConfig};
use serde::Serialize;

use crate::{header, num, opt_num, write_csv, write_json, CliError, Common};

#[derive(Debug, Clone, Args)]
pub struct PowerArgs {
    /// Number of simulations.
    #[arg(long)]
    pub sims: Option<usize>,
    /// Upper bound of the uniform sample sizes.
    #[arg(long)]
    pub max_n: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    n_sims: usize,
    max_n: usize,
    alpha: f64,
    mc_draws: usize,
    seed: u64,
    accepted_count: usize,
    acceptance_fraction: f64,
    z_count: usize,
    cdf_band_passed: bool,
    max_band_violation: f64,
}

pub fn run(common: &Common, a: &PowerArgs) -> Result<(), CliError> {
    let d = PowerStudyConfig::default();
    let cfg = PowerStudyConfig {
        n_sims: common.settings.get_or("sims", a.sims, d.n_sims)?,
        max_n: common.settings.get_or("max-n", a.max_n, d.max_n)?,
        alpha: common.alpha.unwrap_or(d.alpha),
        mc_draws: common.mc_draws.unwrap_or(d.mc_draws),
        seed: common.seed.unwrap_or(d.seed),
    };
    let r = power_study(&cfg)?;
    let out = common.prepare_out()?;
    let rows = r.rows.iter().map(|s| {
        vec![s.sim.to_string(), s.n1.to_string(), s.n2.to_string(), num(s.pi), num(s.statistic), num(s.lower), num(s.upper), s.accepted.to_string(), opt_num(s.z)]
    });
    write_csv(&out.join("sims.csv"), &header(&["sim", "n1", "n2", "pi", "statistic", "lower", "upper", "accepted", "Z"]), rows)?;
    let grid = r.cdf_check.grid.iter().map(|g| {
        vec![num(g.z), num(g.empirical), num(g.expected), num(g.band_lower), num(g.band_upper), g.inside.to_string()]
    });
    write_csv(&out.join("cdf_grid.csv"), &header(&["z", "empirical", "expected", "band_lower", "band_upper", "inside"]), grid)?;
    let summary = Summary {
        n_sims: cfg.n_sims,
        max_n: cfg.max_n,
        alpha: cfg.alpha,
        mc_draws: cfg.mc_draws,
        seed: cfg.seed,
        accepted_count: r.accepted_count,
        acceptance_fraction: r.acceptance_fraction(),
        z_count: r.z_values.len(),
        cdf_band_passed: r.cdf_check.passed,
        max_band_violation: r.cdf_check.max_band_violation,
    };
    write_json(&out.join("summary.json"), &summary)?;
    log::info!("acceptance fraction {}", summary.acceptance_fraction);
    Ok(())
}
