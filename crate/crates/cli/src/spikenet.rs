// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::Args;
use klcp_core::kl::KlTestConfig;
use klcp_core::spike::{fit_sequence, significance_summary, IndependentNormalPrior, MetropolisConfig, SpikeStepRecord};
use serde::{Deserialize, Serialize};

use crate::input::read_raster;
use crate::{header, num, write_csv, write_json, CliError, Common};

#[derive(Debug, Clone, Args)]
pub struct SpikeArgs {
    /// One raster file per trial, in order. `.rle` files use the run-length format.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Metropolis iterations per trial, including burn-in.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Burn-in iterations, during which the proposal scale adapts.
    #[arg(long)]
    pub burn: Option<usize>,
    /// Initial proposal standard deviation.
    #[arg(long)]
    pub proposal_sd: Option<f64>,
    /// Keep every n-th retained draw.
    #[arg(long)]
    pub thin: Option<usize>,
    /// Standard deviation of the initial independent normal prior.
    #[arg(long)]
    pub prior_sd: Option<f64>,
}

/// Contents of the spikenet `trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTraceFile {
    pub config: KlTestConfig,
    pub metropolis: MetropolisConfig,
    pub inputs: Vec<String>,
    pub trace: Vec<SpikeStepRecord>,
    pub acceptance_rates: Vec<f64>,
}

pub fn run(common: &Common, a: &SpikeArgs) -> Result<(), CliError> {
    let s = &common.settings;
    let d = MetropolisConfig::default();
    let seed = common.seed.unwrap_or(0);
    let mcfg = MetropolisConfig {
        iters: s.get_or("iters", a.iters, d.iters)?,
        burn: s.get_or("burn", a.burn, d.burn)?,
        proposal_sd: s.get_or("proposal-sd", a.proposal_sd, d.proposal_sd)?,
        thin: s.get_or("thin", a.thin, d.thin)?,
        adapt: true,
        seed,
    };
    mcfg.validate()?;
    if mcfg.iters == mcfg.burn {
        return Err(CliError::Input(format!("no retained draws: iterations ({}) must exceed burn-in ({})", mcfg.iters, mcfg.burn)));
    }
    let cfg = KlTestConfig::new(common.alpha.unwrap_or(0.05), common.mc_draws.unwrap_or(200), seed)?;
    let trials = a.inputs.iter().enumerate().map(|(i, p)| read_raster(p, i + 1)).collect::<Result<Vec<_>, _>>()?;
    let k = trials[0].neurons();
    if let Some((i, t)) = trials.iter().enumerate().find(|(_, t)| t.neurons() != k) {
        return Err(CliError::Input(format!("{}: {} neurons, but {} has {k}", a.inputs[i].display(), t.neurons(), a.inputs[0].display())));
    }
    let prior_sd = s.get_or("prior-sd", a.prior_sd, 1.0)?;
    let mut prior = IndependentNormalPrior::standard(k);
    prior.sd.fill(prior_sd);
    let result = fit_sequence(&trials, &prior, &cfg, &mcfg)?;
    let out = common.prepare_out()?;

    let mut rows = vec![];
    for fit in &result.fits {
        let (mean, sd) = (fit.mean(), fit.sd());
        let (lo, hi) = fit.interval(0.025);
        for i in 0..k {
            for j in 0..k {
                rows.push(vec![
                    fit.trial_id.to_string(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    num(mean[(i, j)]),
                    num(sd[(i, j)]),
                    num(lo[(i, j)]),
                    num(hi[(i, j)]),
                ]);
            }
        }
    }
    write_csv(&out.join("trial_summaries.csv"), &header(&["trial", "target", "source", "mean", "sd", "q025", "q975"]), rows)?;

    // rows are targets, columns sources
    let summary = significance_summary(&result.fits)?;
    let mut cols = vec!["target".to_string()];
    for j in 1..=k {
        cols.push(format!("{j}_excitatory"));
        cols.push(format!("{j}_inhibitory"));
    }
    let table = (0..k).map(|i| {
        let mut row = vec![(i + 1).to_string()];
        for j in 0..k {
            row.push(num(summary.excitatory_prop[(i, j)]));
            row.push(num(summary.inhibitory_prop[(i, j)]));
        }
        row
    });
    write_csv(&out.join("significance.csv"), &cols, table)?;

    let cps = result.trace.iter().filter_map(|r| {
        let d = r.decision.filter(|d| d.detected)?;
        Some(vec![r.step.to_string(), r.trial_id.to_string(), num(d.statistic), num(d.lower), num(d.upper)])
    });
    write_csv(&out.join("changepoints.csv"), &header(&["step", "trial", "statistic", "lower", "upper"]), cps)?;

    let file = SpikeTraceFile {
        config: cfg,
        metropolis: mcfg,
        inputs: a.inputs.iter().map(|p| p.display().to_string()).collect(),
        trace: result.trace.clone(),
        acceptance_rates: result.fits.iter().map(|f| f.acceptance_rate).collect(),
    };
    write_json(&out.join("trace.json"), &file)
}
