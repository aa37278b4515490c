use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use garch_dpd::experiments::{emit_table, run_study, StudyConfig, TableFormat};
use garch_dpd::forecast::{
    innovation_quantile, ljung_box, one_step_variance, rolling_backtest, select_gamma, BacktestConfig, GammaFamily,
};
use garch_dpd::inference::{
    diagnostics_from_matrix, estimate, fit_mdpde, posterior_mean, sample_posterior, sandwich_covariance, Method,
    OptimizerConfig,
};
use garch_dpd::io::{
    read_draws_matrix, write_atomic, write_draws_csv, write_forecast_csv, write_json, write_returns_csv, DataKind,
    DataSource, RunConfig, SimulationBlock,
};
use garch_dpd::{ContaminationSpec, Error, Gamma, GarchOrder, GarchParams, InnovationDist, ReturnSeries};

#[derive(Parser, Debug)]
#[command(name = "garch-dpd", version, about = "Robust Bayesian GARCH estimation with DPD pseudo-posteriors")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Base random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file (a run config, or a study config for mc-study).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for result files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for chains, replications and grid points.
    #[arg(long, global = true, env = "GARCH_DPD_THREADS")]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// CSV with a `return` column, or closing prices with --prices.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Treat --data as prices and convert to percent log-returns.
    #[arg(long)]
    prices: bool,
    #[arg(long)]
    return_column: Option<String>,
    #[arg(long)]
    date_column: Option<String>,
    #[arg(long)]
    price_column: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodKind {
    Mdpde,
    Eope,
    Edpe,
    EopeT,
}

#[derive(Args, Debug, Clone)]
struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodKind::Edpe)]
    method: MethodKind,
    /// DPD tuning parameter (mdpde, edpe).
    #[arg(long)]
    gamma: Option<f64>,
    /// Student t degrees of freedom (eope-t).
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    leapfrog_steps: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a GARCH(p,q) return path and write it as CSV.
    Simulate {
        /// omega,alpha_1..alpha_p,beta_1..beta_q
        #[arg(long)]
        theta: Option<String>,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        contamination_prob: Option<f64>,
        #[arg(long)]
        contamination_magnitude: Option<f64>,
        /// Standardized Student t innovations with this many degrees of freedom.
        #[arg(long)]
        t_nu: Option<f64>,
        /// Output CSV (defaults to returns.csv in --out-dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Point estimate: MDPDE (with sandwich standard errors) or a posterior mean.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Posterior draws; writes draws.csv to --out-dir.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// One-step-ahead variance and VaR after the last observation.
    Forecast {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        level: Option<f64>,
    },
    /// Rolling out-of-sample backtest.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
        /// First out-of-sample index.
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        refit_every: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
    },
    /// Pick gamma by out-of-sample forecast RMSE.
    SelectGamma {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated gamma values.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, value_enum, default_value_t = FamilyArg::PosteriorMean)]
        family: FamilyArg,
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        refit_every: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        leapfrog_steps: Option<usize>,
    },
    /// Monte Carlo study from a study config (--config).
    McStudy {
        /// Override the replication count.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Ljung-Box tests on returns and squared returns; sampler
    /// diagnostics for a draws CSV.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        /// Draws CSV from `sample`.
        #[arg(long)]
        draws: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyArg {
    PosteriorMean,
    Mdpde,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

struct Outcome {
    command: &'static str,
    seed: u64,
    config: Value,
    result: Value,
    outputs: Vec<PathBuf>,
}

fn config_hash(config: &Value) -> String {
    let text = serde_json::to_string(config).expect("json values serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize")
}

fn parse_list(text: &str, what: &str) -> CmdResult<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad {what} entry {s:?}"))))
        .collect()
}

fn load_run_config(common: &Common) -> CmdResult<RunConfig> {
    match &common.config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Option<PathBuf> {
    common.out_dir.clone().or_else(|| cfg.out_dir.clone())
}

fn apply_data_args(cfg: &mut RunConfig, args: &DataArgs) {
    if let Some(path) = &args.data {
        let mut src = DataSource::returns(path);
        if args.prices {
            src.kind = DataKind::Prices;
        }
        cfg.data = Some(src);
        cfg.simulation = None;
    }
    if let Some(src) = cfg.data.as_mut() {
        if let Some(c) = &args.return_column {
            src.return_column = c.clone();
        }
        if let Some(c) = &args.date_column {
            src.date_column = c.clone();
        }
        if let Some(c) = &args.price_column {
            src.price_column = c.clone();
        }
    }
}

fn load_series(cfg: &RunConfig, seed: u64) -> CmdResult<ReturnSeries> {
    if cfg.data.is_none() && cfg.simulation.is_none() {
        return usage("no data: pass --data or set `data`/`simulation` in --config");
    }
    Ok(cfg.series(seed)?)
}

fn apply_sampler_args(cfg: &mut RunConfig, chains: Option<usize>, warmup: Option<usize>, samples: Option<usize>) {
    if let Some(c) = chains {
        cfg.sampler.n_chains = c;
    }
    if let Some(w) = warmup {
        cfg.sampler.warmup = w;
    }
    if let Some(s) = samples {
        cfg.sampler.samples = s;
    }
}

fn resolve_method(cfg: &mut RunConfig, args: &MethodArgs) -> CmdResult<Method> {
    apply_sampler_args(cfg, args.chains, args.warmup, args.samples);
    if let Some(l) = args.leapfrog_steps {
        cfg.sampler.leapfrog_steps = l;
    }
    cfg.sampler.validate()?;
    let gamma = match args.gamma {
        Some(g) => Some(Gamma::new(g)?),
        None => cfg.gamma,
    };
    let need_gamma = || gamma.ok_or_else(|| Failure::Usage("this method needs --gamma".into()));
    Ok(match args.method {
        MethodKind::Mdpde => Method::Mdpde { gamma: need_gamma()? },
        MethodKind::Edpe => Method::posterior_mean(need_gamma()?),
        MethodKind::Eope => Method::Eope,
        MethodKind::EopeT => {
            let nu = args.nu.ok_or_else(|| Failure::Usage("eope-t needs --nu".into()))?;
            Method::EopeT { nu }
        }
    })
}

fn model_order(cfg: &RunConfig) -> GarchOrder {
    cfg.order.unwrap_or_else(GarchOrder::garch11)
}

/// Posterior sampling and forecasting are GARCH(1,1) only.
fn require_garch11(cfg: &RunConfig, command: &str) -> CmdResult<()> {
    let order = model_order(cfg);
    if order != GarchOrder::garch11() {
        return usage(format!("{command} supports GARCH(1,1) only, config asks for ({},{})", order.p, order.q));
    }
    Ok(())
}

fn base_config(cfg: &RunConfig, seed: u64) -> Value {
    json!({
        "seed": seed,
        "order": model_order(cfg),
        "data": cfg.data,
        "simulation": cfg.simulation,
        "prior": cfg.prior,
        "sampler": cfg.sampler,
        "optimizer": cfg.optimizer,
    })
}

fn extend(mut v: Value, extra: Value) -> Value {
    if let (Some(a), Some(b)) = (v.as_object_mut(), extra.as_object()) {
        for (k, val) in b {
            a.insert(k.clone(), val.clone());
        }
    }
    v
}

fn cmd_simulate(common: &Common, cmd: &Command) -> CmdResult<Outcome> {
    let Command::Simulate { theta, p, q, n, burn_in, contamination_prob, contamination_magnitude, t_nu, out } = cmd
    else {
        unreachable!()
    };
    let cfg = load_run_config(common)?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let mut block = match (&cfg.simulation, theta) {
        (_, Some(text)) => {
            let order = GarchOrder::new(*p, *q)?;
            let values = parse_list(text, "theta")?;
            if values.len() != order.dim() {
                return usage(format!("--theta needs {} values for GARCH({p},{q}), got {}", order.dim(), values.len()));
            }
            let n = n.or(cfg.simulation.as_ref().map(|s| s.n));
            let Some(n) = n else { return usage("simulate needs --n") };
            SimulationBlock {
                theta: GarchParams::from_slice(order, &values)?,
                n,
                burn_in: cfg.simulation.as_ref().map_or(1000, |s| s.burn_in),
                innovation: InnovationDist::StandardNormal,
                contamination: ContaminationSpec::none(),
                seed: None,
            }
        }
        (Some(s), None) => s.clone(),
        (None, None) => return usage("simulate needs --theta or a `simulation` block in --config"),
    };
    if let Some(n) = n {
        block.n = *n;
    }
    if let Some(b) = burn_in {
        block.burn_in = *b;
    }
    if contamination_prob.is_some() || contamination_magnitude.is_some() {
        block.contamination = ContaminationSpec::new(
            contamination_prob.unwrap_or(block.contamination.prob),
            contamination_magnitude.unwrap_or(block.contamination.magnitude),
        )?;
    }
    if let Some(nu) = t_nu {
        block.innovation = InnovationDist::StudentT { nu: *nu };
    }
    if common.seed.is_some() {
        block.seed = None;
    }
    let path = match (out, out_dir(common, &cfg)) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("returns.csv"),
        (None, None) => return usage("simulate needs --out or --out-dir"),
    };
    let series = block.generate(seed)?;
    write_returns_csv(&path, &series)?;
    let x = series.values();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(Outcome {
        command: "simulate",
        seed,
        config: json!({ "seed": seed, "simulation": block, "out": path }),
        result: json!({ "n": x.len(), "mean": mean, "variance": var, "origin": series.origin }),
        outputs: vec![path],
    })
}

fn fit_summary(fit: &garch_dpd::FitResult) -> Value {
    json!({
        "method": fit.method.label(),
        "estimate": fit.estimate.to_vec(),
        "objective": fit.objective,
        "boundary_warning": fit.boundary_warning,
        "warnings": fit.warnings,
        "rhat": fit.diagnostics.as_ref().map(|d| d.rhat.clone()),
        "ess": fit.diagnostics.as_ref().map(|d| d.ess.clone()),
        "std_errors": fit.covariance.as_ref().map(|c| c.std_errors()),
    })
}

fn cmd_fit(common: &Common, data: &DataArgs, margs: &MethodArgs) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let method = resolve_method(&mut cfg, margs)?;
    let order = model_order(&cfg);
    let series = load_series(&cfg, seed)?;
    let mut fit = match method {
        Method::Mdpde { gamma } if order != GarchOrder::garch11() => {
            fit_mdpde(&series, gamma, order, &OptimizerConfig { seed, ..cfg.optimizer.clone() })?
        }
        _ => {
            require_garch11(&cfg, "this method")?;
            estimate(&series, &method, &cfg.settings(), seed)?
        }
    };
    if let Method::Mdpde { gamma } = method {
        match sandwich_covariance(series.values(), &fit.estimate, gamma) {
            Ok(c) => fit.covariance = Some(c),
            Err(e) => fit.warnings.push(format!("no sandwich covariance: {e}")),
        }
    }
    let mut outputs = Vec::new();
    if let Some(dir) = out_dir(common, &cfg) {
        let p = dir.join("fit.json");
        write_json(&p, &fit)?;
        outputs.push(p);
    }
    Ok(Outcome {
        command: "fit",
        seed,
        config: extend(base_config(&cfg, seed), json!({ "method": method })),
        result: extend(fit_summary(&fit), json!({ "n": series.len() })),
        outputs,
    })
}

fn cmd_sample(common: &Common, data: &DataArgs, margs: &MethodArgs) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let method = resolve_method(&mut cfg, margs)?;
    if matches!(method, Method::Mdpde { .. }) {
        return usage("sample needs a posterior method (eope, edpe, eope-t)");
    }
    require_garch11(&cfg, "sample")?;
    let series = load_series(&cfg, seed)?;
    let sampler = garch_dpd::SamplerConfig { seed, ..cfg.sampler.clone() };
    let (draws, diag) = sample_posterior(&series, method.gamma(), &cfg.prior, method.likelihood(), &sampler)?;
    let mut outputs = Vec::new();
    if let Some(dir) = out_dir(common, &cfg) {
        let p = dir.join("draws.csv");
        write_draws_csv(&p, &draws)?;
        outputs.push(p);
        let p = dir.join("diagnostics.json");
        write_json(&p, &diag)?;
        outputs.push(p);
    }
    Ok(Outcome {
        command: "sample",
        seed,
        config: extend(base_config(&cfg, seed), json!({ "method": method })),
        result: json!({
            "method": method.label(),
            "posterior_mean": posterior_mean(&draws)?.to_vec(),
            "posterior_sd": draws.std_dev(),
            "rhat": diag.rhat,
            "ess": diag.ess,
            "accept_rate": draws.accept_rate,
            "divergences": draws.divergence_count,
            "step_size": draws.step_size,
        }),
        outputs,
    })
}

fn cmd_forecast(common: &Common, data: &DataArgs, margs: &MethodArgs, level: Option<f64>) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let method = resolve_method(&mut cfg, margs)?;
    let level = level.or(cfg.backtest.as_ref().map(|b| b.level)).unwrap_or(0.05);
    require_garch11(&cfg, "forecast")?;
    let series = load_series(&cfg, seed)?;
    let fit = estimate(&series, &method, &cfg.settings(), seed)?;
    let sigma2 = one_step_variance(&fit, &series)?;
    let z = innovation_quantile(method.likelihood(), level)?;
    Ok(Outcome {
        command: "forecast",
        seed,
        config: extend(base_config(&cfg, seed), json!({ "method": method, "level": level })),
        result: extend(
            fit_summary(&fit),
            json!({ "t": series.len(), "sigma2_hat": sigma2, "var_hat": z * sigma2.sqrt(), "level": level }),
        ),
        outputs: vec![],
    })
}

fn backtest_config(cfg: &RunConfig, seed: u64, refit_every: Option<usize>, level: Option<f64>) -> BacktestConfig {
    BacktestConfig {
        level: level.or(cfg.backtest.as_ref().map(|b| b.level)).unwrap_or(0.05),
        refit_every: refit_every.or(cfg.backtest.as_ref().map(|b| b.refit_every)).unwrap_or(1),
        settings: cfg.settings(),
        seed,
    }
}

fn split_index(cfg: &RunConfig, split: Option<usize>) -> CmdResult<usize> {
    match split.or(cfg.backtest.as_ref().map(|b| b.split_index)) {
        Some(s) => Ok(s),
        None => usage("needs --split or `backtest.split_index` in --config"),
    }
}

fn cmd_backtest(
    common: &Common,
    data: &DataArgs,
    margs: &MethodArgs,
    split: Option<usize>,
    refit_every: Option<usize>,
    level: Option<f64>,
) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let method = resolve_method(&mut cfg, margs)?;
    let split = split_index(&cfg, split)?;
    require_garch11(&cfg, "backtest")?;
    let bt = backtest_config(&cfg, seed, refit_every, level);
    let series = load_series(&cfg, seed)?;
    let report = rolling_backtest(&series, split, &method, &bt)?;
    let mut outputs = Vec::new();
    if let Some(dir) = out_dir(common, &cfg) {
        let p = dir.join("backtest.json");
        write_json(&p, &report)?;
        outputs.push(p);
        let p = dir.join("forecasts.csv");
        write_forecast_csv(&p, &report)?;
        outputs.push(p);
    }
    Ok(Outcome {
        command: "backtest",
        seed,
        config: extend(
            base_config(&cfg, seed),
            json!({ "method": method, "split": split, "refit_every": bt.refit_every, "level": bt.level }),
        ),
        result: json!({
            "method": method.label(),
            "points": report.points.len(),
            "rmse": report.rmse,
            "mae": report.mae,
            "violation_rate": report.violation_rate,
        }),
        outputs,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_select_gamma(
    common: &Common,
    data: &DataArgs,
    grid: &Option<String>,
    family: FamilyArg,
    split: Option<usize>,
    refit_every: Option<usize>,
    level: Option<f64>,
    sampler: (Option<usize>, Option<usize>, Option<usize>, Option<usize>),
) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    apply_sampler_args(&mut cfg, sampler.0, sampler.1, sampler.2);
    if let Some(l) = sampler.3 {
        cfg.sampler.leapfrog_steps = l;
    }
    cfg.sampler.validate()?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let grid: Vec<Gamma> = match (grid, &cfg.grid) {
        (Some(text), _) => parse_list(text, "grid")?.into_iter().map(Gamma::new).collect::<garch_dpd::Result<_>>()?,
        (None, Some(g)) => g.clone(),
        (None, None) => return usage("select-gamma needs --grid or `grid` in --config"),
    };
    let family = match family {
        FamilyArg::PosteriorMean => GammaFamily::PosteriorMean,
        FamilyArg::Mdpde => GammaFamily::Mdpde,
    };
    let split = split_index(&cfg, split)?;
    require_garch11(&cfg, "select-gamma")?;
    let bt = backtest_config(&cfg, seed, refit_every, level);
    let series = load_series(&cfg, seed)?;
    let sel = select_gamma(&series, split, &grid, family, &bt)?;
    let mut outputs = Vec::new();
    if let Some(dir) = out_dir(common, &cfg) {
        let p = dir.join("select_gamma.json");
        write_json(&p, &sel)?;
        outputs.push(p);
    }
    Ok(Outcome {
        command: "select-gamma",
        seed,
        config: extend(
            base_config(&cfg, seed),
            json!({ "grid": grid, "family": family, "split": split, "refit_every": bt.refit_every, "level": bt.level }),
        ),
        result: to_value(&sel),
        outputs,
    })
}

fn cmd_mc_study(common: &Common, replications: Option<usize>) -> CmdResult<Outcome> {
    let Some(path) = &common.config else { return usage("mc-study needs --config with a study config") };
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let mut study: StudyConfig = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(s) = common.seed {
        study.seed = s;
    }
    if let Some(r) = replications {
        study.replications = r;
    }
    let result = run_study(&study)?;
    let mut outputs = Vec::new();
    if let Some(dir) = &common.out_dir {
        let p = dir.join("study.json");
        write_json(&p, &result)?;
        outputs.push(p);
        for (name, format) in [("table.md", TableFormat::Markdown), ("table.csv", TableFormat::Csv)] {
            let p = dir.join(name);
            write_atomic(&p, emit_table(&result, format)?.as_bytes())?;
            outputs.push(p);
        }
    }
    let columns: Vec<Value> = result
        .estimators
        .iter()
        .map(|e| json!({ "label": e.label, "mean": e.mean_estimate, "total_scaled_rmse": e.total_scaled_rmse }))
        .collect();
    Ok(Outcome {
        command: "mc-study",
        seed: study.seed,
        config: to_value(&study),
        result: json!({ "completed": result.completed, "failures": result.failures.len(), "estimators": columns }),
        outputs,
    })
}

fn cmd_diagnose(common: &Common, data: &DataArgs, max_lag: usize, draws: &Option<PathBuf>) -> CmdResult<Outcome> {
    let mut cfg = load_run_config(common)?;
    apply_data_args(&mut cfg, data);
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let has_data = cfg.data.is_some() || cfg.simulation.is_some();
    if !has_data && draws.is_none() {
        return usage("diagnose needs --data (or a config data source) and/or --draws");
    }
    let mut result = json!({});
    if has_data {
        let series = load_series(&cfg, seed)?;
        let sq: Vec<f64> = series.values().iter().map(|v| v * v).collect();
        result = extend(
            result,
            json!({
                "n": series.len(),
                "ljung_box_returns": ljung_box(series.values(), max_lag)?,
                "ljung_box_squared": ljung_box(&sq, max_lag)?,
            }),
        );
    }
    if let Some(p) = draws {
        let diag = diagnostics_from_matrix(&read_draws_matrix(p)?)?;
        result = extend(result, json!({ "rhat": diag.rhat, "ess": diag.ess }));
    }
    let mut outputs = Vec::new();
    if let Some(dir) = out_dir(common, &cfg) {
        let p = dir.join("diagnose.json");
        write_json(&p, &result)?;
        outputs.push(p);
    }
    Ok(Outcome {
        command: "diagnose",
        seed,
        config: extend(base_config(&cfg, seed), json!({ "max_lag": max_lag, "draws": draws })),
        result,
        outputs,
    })
}

fn run(cli: &Cli) -> CmdResult<Outcome> {
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Runtime(Error::Input(format!("thread pool: {e}"))))?;
    }
    let c = &cli.common;
    match &cli.command {
        cmd @ Command::Simulate { .. } => cmd_simulate(c, cmd),
        Command::Fit { data, method } => cmd_fit(c, data, method),
        Command::Sample { data, method } => cmd_sample(c, data, method),
        Command::Forecast { data, method, level } => cmd_forecast(c, data, method, *level),
        Command::Backtest { data, method, split, refit_every, level } => {
            cmd_backtest(c, data, method, *split, *refit_every, *level)
        }
        Command::SelectGamma {
            data,
            grid,
            family,
            split,
            refit_every,
            level,
            chains,
            warmup,
            samples,
            leapfrog_steps,
        } => {
            let sampler = (*chains, *warmup, *samples, *leapfrog_steps);
            cmd_select_gamma(c, data, grid, *family, *split, *refit_every, *level, sampler)
        }
        Command::McStudy { replications } => cmd_mc_study(c, *replications),
        Command::Diagnose { data, max_lag, draws } => cmd_diagnose(c, data, *max_lag, draws),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(o) => {
            let summary = json!({
                "command": o.command,
                "status": "ok",
                "seed": o.seed,
                "config_hash": config_hash(&o.config),
                "config": o.config,
                "result": o.result,
                "outputs": o.outputs.iter().map(|p| display(p)).collect::<Vec<_>>(),
            });
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun with --help for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            let err = json!({ "status": "error", "kind": e.kind(), "message": e.to_string() });
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}
