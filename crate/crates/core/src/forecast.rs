//! One-step-ahead variance and VaR forecasts, rolling backtests, gamma
//! selection by out-of-sample RMSE, and the Ljung-Box statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::garch::{next_variance, proxy_variances, GarchParams, ReturnSeries};
use crate::inference::{estimate, EstimationSettings, FitResult, Likelihood, Method};
use crate::objective::Gamma;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Index of the forecast return in the full series.
    pub t: usize,
    pub sigma2_hat: f64,
    pub var_hat: f64,
    pub realized_return: f64,
    pub realized_sq: f64,
}

impl ForecastPoint {
    pub fn violated(&self) -> bool {
        self.realized_return < self.var_hat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub points: Vec<ForecastPoint>,
    pub rmse: f64,
    pub mae: f64,
    pub violation_rate: f64,
    pub method: Method,
    pub gamma: Gamma,
    pub refit_every: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// VaR tail probability.
    pub level: f64,
    /// Refit every this many out-of-sample days. Each refit is a full
    /// estimation, so cost grows with the number of days divided by this.
    pub refit_every: usize,
    pub settings: EstimationSettings,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { level: 0.05, refit_every: 1, settings: EstimationSettings::default(), seed: 0 }
    }
}

/// Plug-in forecast of the next conditional variance after `history`,
/// recomputing the proxy recursion under the fitted parameters.
pub fn one_step_variance(fit: &FitResult, history: &ReturnSeries) -> Result<f64> {
    Ok(forecast_variance(&fit.estimate, history.values()))
}

fn forecast_variance(params: &GarchParams, x: &[f64]) -> f64 {
    next_variance(params, x, &proxy_variances(params, x))
}

/// Lower-tail quantile of the unit-variance innovation law.
pub fn innovation_quantile(likelihood: Likelihood, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 0.5) {
        return Err(Error::Input(format!("VaR level must lie in (0, 0.5), got {level}")));
    }
    match likelihood {
        Likelihood::Gaussian => Ok(Normal::standard().inverse_cdf(level)),
        Likelihood::StudentT { nu } => {
            let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::Parameter(format!("student t: {e}")))?;
            if nu <= 2.0 {
                return Err(Error::Parameter(format!("nu must exceed 2, got {nu}")));
            }
            Ok(t.inverse_cdf(level) * ((nu - 2.0) / nu).sqrt())
        }
    }
}

/// Rolling one-step-ahead evaluation over `series[split_index..]`. The
/// forecast for index t uses a fit on `series[..t]`, refreshed whenever
/// `(t - split_index) % refit_every == 0`.
pub fn rolling_backtest(
    series: &ReturnSeries,
    split_index: usize,
    method: &Method,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    let x = series.values();
    if split_index == 0 || split_index >= x.len() {
        return Err(Error::Input(format!(
            "split index {split_index} leaves no in-sample or out-of-sample data (series length {})",
            x.len()
        )));
    }
    if config.refit_every == 0 {
        return Err(Error::Input("refit_every must be at least 1".into()));
    }
    let z = innovation_quantile(method.likelihood(), config.level)?;

    let mut points = Vec::with_capacity(x.len() - split_index);
    let mut params: Option<GarchParams> = None;
    for t in split_index..x.len() {
        if params.is_none() || (t - split_index).is_multiple_of(config.refit_every) {
            let history = series.prefix(t)?;
            let fit = estimate(&history, method, &config.settings, derive_seed(config.seed, 0xb7e5, t as u64))?;
            params = Some(fit.estimate);
        }
        let p = params.as_ref().expect("fitted above");
        let sigma2_hat = forecast_variance(p, &x[..t]);
        points.push(ForecastPoint {
            t,
            sigma2_hat,
            var_hat: z * sigma2_hat.sqrt(),
            realized_return: x[t],
            realized_sq: x[t] * x[t],
        });
    }

    let m = points.len() as f64;
    let rmse = (points.iter().map(|p| (p.sigma2_hat - p.realized_sq).powi(2)).sum::<f64>() / m).sqrt();
    let mae = points.iter().map(|p| (p.sigma2_hat - p.realized_sq).abs()).sum::<f64>() / m;
    let violations = points.iter().filter(|p| p.violated()).count();
    Ok(BacktestReport {
        points,
        rmse,
        mae,
        violation_rate: violations as f64 / m,
        method: method.clone(),
        gamma: method.gamma(),
        refit_every: config.refit_every,
        level: config.level,
    })
}

/// Estimator used for each grid value during gamma selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaFamily {
    /// EOPE at gamma 0, EDPE otherwise.
    #[default]
    PosteriorMean,
    Mdpde,
}

impl GammaFamily {
    pub fn method(self, gamma: Gamma) -> Method {
        match self {
            GammaFamily::PosteriorMean => Method::posterior_mean(gamma),
            GammaFamily::Mdpde => Method::Mdpde { gamma },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScore {
    pub gamma: Gamma,
    pub rmse: f64,
    pub mae: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSelection {
    pub gamma: Gamma,
    /// One row per grid value, in grid order.
    pub table: Vec<GammaScore>,
}

/// Backtests every grid value and picks the one with the smallest RMSE;
/// ties go to the smaller gamma.
pub fn select_gamma(
    series: &ReturnSeries,
    split_index: usize,
    grid: &[Gamma],
    family: GammaFamily,
    config: &BacktestConfig,
) -> Result<GammaSelection> {
    if grid.is_empty() {
        return Err(Error::Input("gamma grid is empty".into()));
    }
    let reports: Vec<Result<BacktestReport>> =
        grid.par_iter().map(|g| rolling_backtest(series, split_index, &family.method(*g), config)).collect();
    let table = reports
        .into_iter()
        .zip(grid)
        .map(|(r, g)| r.map(|r| GammaScore { gamma: *g, rmse: r.rmse, mae: r.mae, violation_rate: r.violation_rate }))
        .collect::<Result<Vec<_>>>()?;
    let best = table
        .iter()
        .min_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.gamma.value().total_cmp(&b.gamma.value())))
        .expect("grid is nonempty");
    Ok(GammaSelection { gamma: best.gamma, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBoxLag {
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Ljung-Box Q statistics for lags 1..=max_lag.
pub fn ljung_box(series: &[f64], max_lag: usize) -> Result<Vec<LjungBoxLag>> {
    let n = series.len();
    if max_lag == 0 || 2 * max_lag >= n {
        return Err(Error::Input(format!("max_lag must lie in [1, n/2), got {max_lag} for n = {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Input("series has zero variance; autocorrelations are undefined".into()));
    }
    let nf = n as f64;
    let mut q = 0.0;
    let mut out = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        let rho = dev[k..].iter().zip(&dev[..n - k]).map(|(a, b)| a * b).sum::<f64>() / denom;
        q += rho * rho / (nf - k as f64);
        let statistic = nf * (nf + 2.0) * q;
        let chi = ChiSquared::new(k as f64).map_err(|e| Error::Parameter(format!("chi-square: {e}")))?;
        out.push(LjungBoxLag { lag: k, statistic, p_value: chi.sf(statistic) });
    }
    Ok(out)
}
