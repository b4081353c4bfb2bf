// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use clap::Args;
use klcp_core::engine::{predictive, step, ChangePointTrace, EngineState, PredictiveT};
use klcp_core::expfam::{ConjugatePosterior, FamilyKind};
use klcp_core::kl::{KlDecision, KlTestConfig};
use klcp_core::mv::{mv_step, GibbsConfig, MvBatch, MvEngineConfig, MvEngineState, MvTrace, NiwParams};
use serde::{Deserialize, Serialize};

use crate::input::{read_series, Batched};
use crate::{header, num, opt_num, write_csv, write_json, CliError, Common};

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// CSV series with a header row.
    pub input: PathBuf,
    /// bernoulli, poisson, gaussian or mv-gaussian.
    #[arg(long)]
    pub model: Option<String>,
    /// Rows per batch when no batch column is given.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Column whose consecutive equal values delimit batches.
    #[arg(long)]
    pub batch_column: Option<String>,
    /// Value column of a scalar model (default: first non-batch column).
    #[arg(long)]
    pub value_column: Option<String>,
    /// Comma-separated value columns of mv-gaussian (default: all non-batch columns).
    #[arg(long)]
    pub columns: Option<String>,
    /// Shape coefficient of the gaussian prior.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Prior mean of the gaussian model.
    #[arg(long)]
    pub mu0: Option<f64>,
    /// Prior variance scale of the gaussian model.
    #[arg(long = "sigma0-sq")]
    pub sigma0_sq: Option<f64>,
    /// Inverse-Wishart degrees of freedom of mv-gaussian (default: dimension + 2).
    #[arg(long)]
    pub dof: Option<f64>,
    /// Gibbs iterations per mv-gaussian step, including burn-in.
    #[arg(long)]
    pub gibbs_iters: Option<usize>,
    #[arg(long)]
    pub gibbs_burn: Option<usize>,
    /// Comma-separated alphas; writes sweep.csv with the detection count at each.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Model {
    Scalar(FamilyKind),
    MvGaussian,
}

fn parse_model(name: &str) -> Result<Model, CliError> {
    Ok(match name {
        "bernoulli" => Model::Scalar(FamilyKind::Bernoulli),
        "poisson" => Model::Scalar(FamilyKind::Poisson),
        "gaussian" | "gaussian-normal-gamma" => Model::Scalar(FamilyKind::Gaussian),
        "mv-gaussian" => Model::MvGaussian,
        other => return Err(CliError::Input(format!("unknown model {other:?}; expected bernoulli, poisson, gaussian or mv-gaussian"))),
    })
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad {what} value {t:?}"))))
        .collect()
}

/// Contents of `trace.json` for the scalar models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTraceFile {
    pub model: FamilyKind,
    pub config: KlTestConfig,
    pub trace: ChangePointTrace,
    /// One-step-ahead predictive after each step (gaussian only).
    pub predictive: Vec<Option<PredictiveT>>,
}

/// Contents of `trace.json` for mv-gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvTraceFile {
    pub model: String,
    pub config: KlTestConfig,
    pub columns: Vec<String>,
    pub trace: MvTrace,
}

struct ScalarSetup {
    kind: FamilyKind,
    prior: ConjugatePosterior,
    nu: Option<f64>,
    mu0: f64,
    sigma0_sq: f64,
}

fn decision_cells(d: Option<&KlDecision>) -> Vec<String> {
    match d {
        None => vec![String::new(); 4],
        Some(d) => vec![d.detected.to_string(), num(d.statistic), num(d.lower), num(d.upper)],
    }
}

fn changepoint_rows<'a>(items: impl Iterator<Item = (usize, usize, Option<&'a KlDecision>)>) -> Vec<Vec<String>> {
    items
        .filter_map(|(step, n, d)| {
            let d = d.filter(|d| d.detected)?;
            Some(vec![step.to_string(), n.to_string(), num(d.statistic), num(d.lower), num(d.upper)])
        })
        .collect()
}

fn check_domain(kind: FamilyKind, data: &Batched, path: &Path) -> Result<(), CliError> {
    for (b, batch) in data.scalar().iter().enumerate() {
        if let Err(klcp_core::Error::Domain { index, message }) = kind.batch_stats(batch) {
            return Err(CliError::Input(format!("{}:{}: {message}", path.display(), data.lines[b][index])));
        }
    }
    Ok(())
}

fn run_scalar(setup: &ScalarSetup, series: &[Vec<f64>], cfg: &KlTestConfig) -> (ChangePointTrace, Vec<Option<PredictiveT>>, Option<klcp_core::Error>) {
    let mut state = match EngineState::new(setup.prior, setup.nu) {
        Ok(s) => s,
        Err(e) => return (ChangePointTrace::default(), vec![], Some(e)),
    };
    let mut preds = Vec::with_capacity(series.len());
    for batch in series {
        state = match step(&state, batch, cfg) {
            Ok(s) => s,
            Err(e) => return (state.trace, preds, Some(e)),
        };
        if setup.kind == FamilyKind::Gaussian {
            match predictive(&state, setup.nu.expect("gaussian has nu"), setup.mu0, setup.sigma0_sq) {
                Ok(p) => preds.push(Some(p)),
                Err(e) => return (state.trace, preds, Some(e)),
            }
        } else {
            preds.push(None);
        }
    }
    (state.trace, preds, None)
}

fn natural_names(kind: FamilyKind) -> &'static [&'static str] {
    match kind {
        FamilyKind::Bernoulli => &["pi"],
        FamilyKind::Poisson => &["lambda"],
        FamilyKind::Gaussian => &["mu", "sigma_sq"],
    }
}

fn write_scalar(out: &Path, setup: &ScalarSetup, cfg: &KlTestConfig, trace: &ChangePointTrace, preds: &[Option<PredictiveT>]) -> Result<(), CliError> {
    let file = ScalarTraceFile { model: setup.kind, config: *cfg, trace: trace.clone(), predictive: preds.to_vec() };
    write_json(&out.join("trace.json"), &file)?;
    let mut cols = header(&["step", "n_obs", "last_cp", "detected", "statistic", "lower", "upper"]);
    for n in natural_names(setup.kind) {
        cols.push(format!("mean_{n}"));
        cols.push(format!("var_{n}"));
    }
    let gaussian = setup.kind == FamilyKind::Gaussian;
    if gaussian {
        cols.extend(header(&["pred_dof", "pred_location", "pred_precision", "pred_mean", "pred_variance"]));
    }
    let rows = trace.steps.iter().zip(preds).map(|(r, p)| {
        let mut row = vec![r.step.to_string(), r.n_obs.to_string(), r.last_cp.to_string()];
        row.extend(decision_cells(r.decision.as_ref()));
        for (m, v) in r.estimate.mean_natural.iter().zip(&r.estimate.var_natural) {
            row.push(num(*m));
            row.push(num(*v));
        }
        if gaussian {
            let p = p.as_ref();
            row.extend([p.map(|p| p.dof), p.map(|p| p.location), p.map(|p| p.scale_third_arg), p.map(|p| p.mean), p.map(|p| p.variance)].map(opt_num));
        }
        row
    });
    write_csv(&out.join("estimates.csv"), &cols, rows)?;
    let cps = changepoint_rows(trace.steps.iter().map(|r| (r.step, r.n_obs, r.decision.as_ref())));
    write_csv(&out.join("changepoints.csv"), &header(&["step", "n_obs", "statistic", "lower", "upper"]), cps)
}

fn scalar_setup(common: &Common, a: &FitArgs, kind: FamilyKind) -> Result<ScalarSetup, CliError> {
    let s = &common.settings;
    let nu = s.get_or("nu", a.nu, 5.0)?;
    let mu0 = s.get_or("mu0", a.mu0, 0.0)?;
    let sigma0_sq = s.get_or("sigma0-sq", a.sigma0_sq, 1.0)?;
    let (prior, nu) = match kind {
        FamilyKind::Gaussian => {
            if !(nu > 2.0) {
                return Err(CliError::Input(format!("nu must exceed 2, got {nu}")));
            }
            (ConjugatePosterior::transfer_nig(mu0, sigma0_sq, nu)?, Some(nu))
        }
        _ => (ConjugatePosterior::default_prior(kind, nu)?, None),
    };
    Ok(ScalarSetup { kind, prior, nu, mu0, sigma0_sq })
}

fn write_sweep(out: &Path, rows: Vec<(f64, usize)>) -> Result<(), CliError> {
    write_csv(&out.join("sweep.csv"), &header(&["alpha", "detected"]), rows.into_iter().map(|(a, n)| vec![num(a), n.to_string()]))
}

fn fit_scalar(common: &Common, a: &FitArgs, kind: FamilyKind, cfg: &KlTestConfig, sweep: Option<Vec<f64>>) -> Result<(), CliError> {
    let s = &common.settings;
    let value_column: Option<String> = s.get("value-column", a.value_column.clone())?;
    let batch_column: Option<String> = s.get("batch-column", a.batch_column.clone())?;
    let batch_size = s.get_or("batch-size", a.batch_size, 1)?;
    let data = read_series(&a.input, value_column.as_ref().map(std::slice::from_ref), batch_column.as_deref(), batch_size)?;
    check_domain(kind, &data, &a.input)?;
    let setup = scalar_setup(common, a, kind)?;
    let series = data.scalar();
    let out = common.prepare_out()?;
    let (trace, preds, failure) = run_scalar(&setup, &series, cfg);
    write_scalar(out, &setup, cfg, &trace, &preds)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    if let Some(alphas) = sweep {
        let mut rows = vec![];
        for alpha in alphas {
            let c = KlTestConfig::new(alpha, cfg.m_draws, cfg.seed)?;
            let (t, _, failure) = run_scalar(&setup, &series, &c);
            if let Some(e) = failure {
                return Err(e.into());
            }
            rows.push((alpha, t.detection_steps().len()));
        }
        write_sweep(out, rows)?;
    }
    log::info!("{} steps, {} change-points", trace.len(), trace.detection_steps().len());
    Ok(())
}

fn run_mv(prior: &NiwParams, series: &[MvBatch], cfg: &KlTestConfig, mcfg: &MvEngineConfig) -> (MvTrace, Option<klcp_core::Error>) {
    let mut state = match MvEngineState::new(prior.clone()) {
        Ok(s) => s,
        Err(e) => return (MvTrace::default(), Some(e)),
    };
    for b in series {
        state = match mv_step(&state, b, cfg, mcfg) {
            Ok(s) => s,
            Err(e) => return (state.trace, Some(e)),
        };
    }
    (state.trace, None)
}

fn write_mv(out: &Path, columns: &[String], cfg: &KlTestConfig, trace: &MvTrace) -> Result<(), CliError> {
    let file = MvTraceFile { model: "mv-gaussian".into(), config: *cfg, columns: columns.to_vec(), trace: trace.clone() };
    write_json(&out.join("trace.json"), &file)?;
    let p = columns.len();
    let mut cols = header(&["step", "n_obs", "last_cp", "detected", "statistic", "lower", "upper"]);
    for c in columns {
        cols.extend([format!("mu_{c}"), format!("mu_{c}_q10"), format!("mu_{c}_q90")]);
    }
    for i in 0..p {
        for j in i..p {
            cols.push(format!("sigma_{}_{}", columns[i], columns[j]));
        }
    }
    let rows = trace.steps.iter().map(|r| {
        let mut row = vec![r.step.to_string(), r.n_obs.to_string(), r.last_cp.to_string()];
        row.extend(decision_cells(r.decision.as_ref()));
        for (m, (lo, hi)) in r.mean_mu.iter().zip(&r.mu_interval) {
            row.extend([num(*m), num(*lo), num(*hi)]);
        }
        for i in 0..p {
            for j in i..p {
                row.push(num(r.mean_sigma[i][j]));
            }
        }
        row
    });
    write_csv(&out.join("estimates.csv"), &cols, rows)?;
    let cps = changepoint_rows(trace.steps.iter().map(|r| (r.step, r.n_obs, r.decision.as_ref())));
    write_csv(&out.join("changepoints.csv"), &header(&["step", "n_obs", "statistic", "lower", "upper"]), cps)
}

fn fit_mv(common: &Common, a: &FitArgs, cfg: &KlTestConfig, sweep: Option<Vec<f64>>) -> Result<(), CliError> {
    let s = &common.settings;
    let columns: Option<String> = s.get("columns", a.columns.clone())?;
    let columns: Option<Vec<String>> = columns.map(|c| c.split(',').map(|x| x.trim().to_string()).collect());
    let batch_column: Option<String> = s.get("batch-column", a.batch_column.clone())?;
    let batch_size = s.get_or("batch-size", a.batch_size, 1)?;
    let data = read_series(&a.input, columns.as_deref(), batch_column.as_deref(), batch_size)?;
    let p = data.columns.len();
    let dof = s.get_or("dof", a.dof, p as f64 + 2.0)?;
    let defaults = GibbsConfig::default();
    let gibbs = GibbsConfig { iters: s.get_or("gibbs-iters", a.gibbs_iters, defaults.iters)?, burn: s.get_or("gibbs-burn", a.gibbs_burn, defaults.burn)? };
    let mcfg = MvEngineConfig { gibbs, dof };
    let prior = NiwParams::standard(p, dof)?;
    let series: Vec<MvBatch> = data.batches.iter().map(|b| MvBatch::from_rows(b)).collect::<Result<_, _>>()?;
    let out = common.prepare_out()?;
    let (trace, failure) = run_mv(&prior, &series, cfg, &mcfg);
    write_mv(out, &data.columns, cfg, &trace)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    if let Some(alphas) = sweep {
        let mut rows = vec![];
        for alpha in alphas {
            let (t, failure) = run_mv(&prior, &series, &KlTestConfig::new(alpha, cfg.m_draws, cfg.seed)?, &mcfg);
            if let Some(e) = failure {
                return Err(e.into());
            }
            rows.push((alpha, t.detection_steps().len()));
        }
        write_sweep(out, rows)?;
    }
    Ok(())
}

pub fn run(common: &Common, a: &FitArgs) -> Result<(), CliError> {
    let s = &common.settings;
    let model: String = s
        .get("model", a.model.clone())?
        .ok_or_else(|| CliError::Input("--model is required (bernoulli, poisson, gaussian or mv-gaussian)".into()))?;
    let model = parse_model(&model)?;
    let cfg = KlTestConfig::new(common.alpha.unwrap_or(0.05), common.mc_draws.unwrap_or(1000), common.seed.unwrap_or(0))?;
    let sweep: Option<String> = s.get("sweep", a.sweep.clone())?;
    let sweep = sweep.map(|t| parse_list(&t, "sweep")).transpose()?;
    match model {
        Model::Scalar(kind) => fit_scalar(common, a, kind, &cfg, sweep),
        Model::MvGaussian => fit_mv(common, a, &cfg, sweep),
    }
}
