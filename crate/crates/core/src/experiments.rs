//! Monte Carlo studies: simulate, fit a set of estimators per replication,
//! and summarize each by its mean estimate and total scaled RMSE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::GammaFamily;
use crate::garch::{simulate, ContaminationSpec, GarchParams, InnovationDist, SimulationOptions};
use crate::inference::{estimate, EstimationSettings, Method};
use crate::objective::Gamma;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub theta_true: GarchParams,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub replications: usize,
    #[serde(default)]
    pub gamma_grid: Vec<Gamma>,
    /// Estimator applied at each grid value.
    #[serde(default)]
    pub family: GammaFamily,
    /// Extra estimators reported next to the grid, e.g. Student t EOPEs.
    #[serde(default)]
    pub baselines: Vec<Method>,
    #[serde(default)]
    pub contamination: ContaminationSpec,
    #[serde(default)]
    pub innovation: InnovationDist,
    #[serde(default)]
    pub settings: EstimationSettings,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of failed replications above which the study fails.
    #[serde(default = "default_max_failure_rate")]
    pub max_failure_rate: f64,
}

fn default_burn_in() -> usize {
    1000
}

fn default_max_failure_rate() -> f64 {
    0.1
}

impl StudyConfig {
    pub fn new(theta_true: GarchParams, n: usize, replications: usize, gamma_grid: Vec<Gamma>) -> Self {
        Self {
            theta_true,
            n,
            burn_in: default_burn_in(),
            replications,
            gamma_grid,
            family: GammaFamily::PosteriorMean,
            baselines: Vec::new(),
            contamination: ContaminationSpec::none(),
            innovation: InnovationDist::StandardNormal,
            settings: EstimationSettings::default(),
            seed: 0,
            max_failure_rate: default_max_failure_rate(),
        }
    }

    /// Grid estimators followed by baselines, duplicates removed.
    pub fn estimators(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Vec::new();
        for m in self.gamma_grid.iter().map(|g| self.family.method(*g)).chain(self.baselines.iter().cloned()) {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Input(format!("a study needs at least 2 replications, got {}", self.replications)));
        }
        if self.n == 0 {
            return Err(Error::Input("sample size must be positive".into()));
        }
        for (i, a) in self.gamma_grid.iter().enumerate() {
            if self.gamma_grid[..i].contains(a) {
                return Err(Error::Input(format!("gamma {a} appears twice in the grid")));
            }
        }
        if self.estimators().is_empty() {
            return Err(Error::Input("no estimators: give a gamma grid or baselines".into()));
        }
        if self.baselines.iter().any(|m| matches!(m, Method::Fixed { .. })) {
            return Err(Error::Input("fixed parameters are not an estimator".into()));
        }
        self.contamination.validate()?;
        self.innovation.validate()?;
        self.settings.sampler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub method: Method,
    pub mean_estimate: Vec<f64>,
    pub total_scaled_rmse: f64,
    /// One row per completed replication, in replication order.
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub estimator: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub theta_true: Vec<f64>,
    pub estimators: Vec<EstimatorSummary>,
    /// Replications that produced an estimate for every estimator.
    pub completed: usize,
    pub failures: Vec<ReplicationFailure>,
}

impl StudyResult {
    pub fn summary(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }
}

/// Sum over components of RMSE divided by the absolute true value.
pub fn total_scaled_rmse(estimates: &[Vec<f64>], theta_true: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Metric("no estimates".into()));
    }
    if let Some(j) = theta_true.iter().position(|v| *v == 0.0) {
        return Err(Error::Metric(format!("true component {j} is zero; scaled RMSE is undefined")));
    }
    let r = estimates.len() as f64;
    let mut total = 0.0;
    for (j, t) in theta_true.iter().enumerate() {
        let mut ss = 0.0;
        for row in estimates {
            let v = *row.get(j).ok_or_else(|| Error::Metric(format!("estimate row is missing component {j}")))?;
            ss += (v - t).powi(2);
        }
        total += (ss / r).sqrt() / t.abs();
    }
    Ok(total)
}

type Replication = std::result::Result<Vec<Vec<f64>>, ReplicationFailure>;

fn run_replication(config: &StudyConfig, methods: &[Method], r: usize) -> Replication {
    let seed_r = derive_seed(config.seed, 0x57d1, r as u64);
    let opts = SimulationOptions {
        burn_in: config.burn_in,
        dist: config.innovation,
        contamination: config.contamination,
        seed: seed_r,
        allow_nonstationary: false,
    };
    let fail = |estimator: &str, e: Error| ReplicationFailure {
        replication: r,
        estimator: estimator.to_string(),
        message: e.to_string(),
    };
    let series = simulate(&config.theta_true, config.n, &opts).map_err(|e| fail("simulation", e))?;
    let mut settings = config.settings.clone();
    settings.sampler.parallel_chains = false;
    methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            estimate(&series, m, &settings, derive_seed(seed_r, 0xe571, k as u64))
                .map(|f| f.estimate.to_vec())
                .map_err(|e| fail(&m.label(), e))
        })
        .collect()
}

/// Runs every replication (in parallel) and aggregates in replication
/// order. A replication in which any estimator fails is dropped for all of
/// them, so every column is computed on the same data sets.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let methods = config.estimators();
    let reps: Vec<Replication> =
        (0..config.replications).into_par_iter().map(|r| run_replication(config, &methods, r)).collect();

    let mut failures = Vec::new();
    let mut per_method: Vec<Vec<Vec<f64>>> = vec![Vec::new(); methods.len()];
    for rep in reps {
        match rep {
            Ok(rows) => {
                for (k, row) in rows.into_iter().enumerate() {
                    per_method[k].push(row);
                }
            }
            Err(f) => {
                log::warn!("replication {} failed in {}: {}", f.replication, f.estimator, f.message);
                failures.push(f);
            }
        }
    }
    let rate = failures.len() as f64 / config.replications as f64;
    if rate > config.max_failure_rate {
        return Err(Error::Study(format!(
            "{} of {} replications failed; first failure: {}",
            failures.len(),
            config.replications,
            failures.first().map_or(String::new(), |f| format!("{} ({})", f.message, f.estimator))
        )));
    }

    let theta = config.theta_true.to_vec();
    let completed = per_method.first().map_or(0, |v| v.len());
    let estimators = methods
        .into_iter()
        .zip(per_method)
        .map(|(method, rows)| {
            let d = theta.len();
            let mean_estimate = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
            Ok(EstimatorSummary {
                label: method.label(),
                total_scaled_rmse: total_scaled_rmse(&rows, &theta)?,
                method,
                mean_estimate,
                estimates: rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult { theta_true: theta, estimators, completed, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

fn row_names(d: usize) -> Vec<String> {
    if d == 3 {
        return vec!["omega".into(), "alpha".into(), "beta".into()];
    }
    (0..d).map(|j| format!("theta{j}")).collect()
}

/// One column per estimator; rows are the mean estimates followed by the
/// total scaled RMSE. Markdown rounds to 3 decimals; CSV keeps full
/// precision so it can be read back exactly.
pub fn emit_table(result: &StudyResult, format: TableFormat) -> Result<String> {
    if result.estimators.is_empty() {
        return Err(Error::Input("study result has no estimators".into()));
    }
    let d = result.theta_true.len();
    let mut rows: Vec<(String, Vec<f64>)> = row_names(d)
        .into_iter()
        .enumerate()
        .map(|(j, name)| (name, result.estimators.iter().map(|e| e.mean_estimate[j]).collect()))
        .collect();
    rows.push(("rmse".to_string(), result.estimators.iter().map(|e| e.total_scaled_rmse).collect()));

    match format {
        TableFormat::Markdown => {
            let mut out = String::from("| |");
            for e in &result.estimators {
                out.push_str(&format!(" {} |", e.label));
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(result.estimators.len()));
            out.push('\n');
            for (name, vals) in rows {
                out.push_str(&format!("| {name} |"));
                for v in vals {
                    out.push_str(&format!(" {v:.3} |"));
                }
                out.push('\n');
            }
            Ok(out)
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["row".to_string()];
            header.extend(result.estimators.iter().map(|e| e.label.clone()));
            w.write_record(&header)?;
            for (name, vals) in rows {
                let mut rec = vec![name];
                rec.extend(vals.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
        }
    }
}
