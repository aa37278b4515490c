//! Point estimation (MDPDE), posterior sampling, convergence diagnostics and
//! sandwich covariance estimation.

pub mod diagnostics;
pub mod hmc;
pub mod optimize;
pub mod sandwich;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{GarchOrder, GarchParams, ReturnSeries};
use crate::objective::Gamma;
use crate::prior::PriorSpec;

pub use diagnostics::{diagnostics_from_matrix, effective_sample_size, split_rhat, Diagnostics};
pub use hmc::{sample_posterior, Likelihood, PosteriorDraws, SamplerConfig};
pub use optimize::{fit_mdpde, OptimizerConfig};
pub use sandwich::{sandwich_covariance, SandwichCovariance};

/// Which estimator produced (or should produce) a point estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Maximizer of the DPD objective.
    Mdpde { gamma: Gamma },
    /// Posterior mean under the Gaussian likelihood.
    Eope,
    /// Posterior mean under the DPD pseudo-posterior.
    Edpe { gamma: Gamma },
    /// Posterior mean under a Student t likelihood.
    EopeT { nu: f64 },
    /// Externally supplied parameters; nothing is estimated.
    Fixed { params: GarchParams },
}

impl Method {
    /// EDPE at `gamma`, or EOPE when gamma is zero.
    pub fn posterior_mean(gamma: Gamma) -> Self {
        if gamma.is_zero() {
            Method::Eope
        } else {
            Method::Edpe { gamma }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Mdpde { gamma } => format!("MDPDE({gamma})"),
            Method::Eope => "EOPE".to_string(),
            Method::Edpe { gamma } => format!("EDPE({gamma})"),
            Method::EopeT { nu } => format!("EOPE_t({nu})"),
            Method::Fixed { .. } => "fixed".to_string(),
        }
    }

    pub fn gamma(&self) -> Gamma {
        match self {
            Method::Mdpde { gamma } | Method::Edpe { gamma } => *gamma,
            _ => Gamma::ZERO,
        }
    }

    /// Innovation distribution implied by the fitted likelihood.
    pub fn likelihood(&self) -> Likelihood {
        match self {
            Method::EopeT { nu } => Likelihood::StudentT { nu: *nu },
            _ => Likelihood::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimate: GarchParams,
    pub method: Method,
    pub covariance: Option<SandwichCovariance>,
    pub diagnostics: Option<Diagnostics>,
    /// Objective value at the estimate (MDPDE only).
    pub objective: Option<f64>,
    /// Set when the optimum sits at (or runs off to) the edge of the
    /// parameter space, or the objective is flat there.
    pub boundary_warning: bool,
    pub warnings: Vec<String>,
}

/// Knobs shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EstimationSettings {
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub optimizer: OptimizerConfig,
}

/// Componentwise mean over every chain and iteration.
pub fn posterior_mean(draws: &PosteriorDraws) -> Result<GarchParams> {
    let rows: Vec<&GarchParams> = draws.draws.iter().flatten().collect();
    let first = rows.first().ok_or_else(|| Error::Input("no posterior draws".into()))?;
    let order = first.order();
    let mut acc = vec![0.0; order.dim()];
    for r in &rows {
        for (a, v) in acc.iter_mut().zip(r.to_vec()) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GarchParams::from_slice(order, &acc)
}

/// Dispatches to the optimizer or the sampler according to `method`.
/// Posterior-mean methods attach sampler diagnostics; MDPDE attaches nothing
/// beyond the optimizer flags (call [`sandwich_covariance`] separately).
pub fn estimate(series: &ReturnSeries, method: &Method, settings: &EstimationSettings, seed: u64) -> Result<FitResult> {
    let bayes = |gamma: Gamma, likelihood: Likelihood| -> Result<FitResult> {
        let config = SamplerConfig { seed, ..settings.sampler.clone() };
        let (draws, diag) = sample_posterior(series, gamma, &settings.prior, likelihood, &config)?;
        let mut warnings = Vec::new();
        if diag.max_rhat() > 1.1 {
            warnings.push(format!("max R-hat {:.3} exceeds 1.1", diag.max_rhat()));
        }
        Ok(FitResult {
            estimate: posterior_mean(&draws)?,
            method: method.clone(),
            covariance: None,
            diagnostics: Some(diag),
            objective: None,
            boundary_warning: false,
            warnings,
        })
    };
    match method {
        Method::Mdpde { gamma } => {
            let config = OptimizerConfig { seed, ..settings.optimizer.clone() };
            fit_mdpde(series, *gamma, GarchOrder::garch11(), &config)
        }
        Method::Eope => bayes(Gamma::ZERO, Likelihood::Gaussian),
        Method::Edpe { gamma } => bayes(*gamma, Likelihood::Gaussian),
        Method::EopeT { nu } => bayes(Gamma::ZERO, Likelihood::StudentT { nu: *nu }),
        Method::Fixed { params } => Ok(FitResult {
            estimate: params.clone(),
            method: method.clone(),
            covariance: None,
            diagnostics: None,
            objective: None,
            boundary_warning: false,
            warnings: Vec::new(),
        }),
    }
}
