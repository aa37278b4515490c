//! Robust Bayesian estimation of GARCH volatility models with density power
//! divergence (DPD) pseudo-posteriors.

pub mod error;
pub mod experiments;
pub mod forecast;
pub mod garch;
pub mod inference;
pub mod io;
pub mod objective;
pub mod prior;
pub mod rng;

pub use error::{Error, Result};
pub use experiments::{emit_table, run_study, total_scaled_rmse, StudyConfig, StudyResult, TableFormat};
pub use forecast::{
    ljung_box, one_step_variance, rolling_backtest, select_gamma, BacktestConfig, BacktestReport, ForecastPoint,
    GammaFamily, GammaSelection,
};
pub use garch::{
    check_stationarity, simulate, variance_recursion, ContaminationSpec, GarchOrder, GarchParams, InnovationDist,
    Origin, ReturnSeries, SimulationOptions, VariancePath,
};
pub use inference::{
    estimate, fit_mdpde, posterior_mean, sample_posterior, sandwich_covariance, Diagnostics, EstimationSettings,
    FitResult, Likelihood, Method, OptimizerConfig, PosteriorDraws, SamplerConfig, SandwichCovariance,
};
pub use io::{load_prices, to_log_returns, PriceSeries, RunConfig};
pub use objective::{
    dpd_gradient, dpd_objective, dpd_objective_shifted, gaussian_loglik, student_t_loglik, Gamma, GradientVector,
    Objective, ObjectiveValue,
};
pub use prior::{log_prior, to_constrained, to_unconstrained, PriorSpec, Reparam, UnconstrainedPoint};
