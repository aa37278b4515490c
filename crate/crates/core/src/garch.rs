//! GARCH(p,q) model representation, conditional-variance proxy recursion,
//! simulation with burn-in, and innovation-outlier contamination.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_CONTAMINATION, STREAM_INNOVATIONS};

/// Upper bound on either order.
pub const MAX_ORDER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GarchOrder {
    /// ARCH order.
    pub p: usize,
    /// GARCH order.
    pub q: usize,
}

impl GarchOrder {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p + q == 0 {
            return Err(Error::Parameter("GARCH order needs p + q >= 1".into()));
        }
        if p > MAX_ORDER || q > MAX_ORDER {
            return Err(Error::Parameter(format!("GARCH order ({p},{q}) exceeds the supported bound {MAX_ORDER}")));
        }
        Ok(Self { p, q })
    }

    pub const fn garch11() -> Self {
        Self { p: 1, q: 1 }
    }

    /// Number of free parameters, 1 + p + q.
    pub fn dim(&self) -> usize {
        1 + self.p + self.q
    }
}

impl Default for GarchOrder {
    fn default() -> Self {
        Self::garch11()
    }
}

/// Parameter vector (omega, alpha_1..alpha_p, beta_1..beta_q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct GarchParams {
    omega: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    omega: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl TryFrom<RawParams> for GarchParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        GarchParams::new(raw.omega, raw.alpha, raw.beta)
    }
}

impl From<GarchParams> for RawParams {
    fn from(p: GarchParams) -> Self {
        RawParams { omega: p.omega, alpha: p.alpha, beta: p.beta }
    }
}

impl GarchParams {
    pub fn new(omega: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        GarchOrder::new(alpha.len(), beta.len())?;
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::Parameter(format!("omega must be positive and finite, got {omega}")));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Parameter(format!("alpha coefficients must be >= 0, got {a}")));
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Parameter(format!("beta coefficients must be >= 0, got {b}")));
        }
        Ok(Self { omega, alpha, beta })
    }

    /// GARCH(1,1) shorthand.
    pub fn garch11(omega: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(omega, vec![alpha], vec![beta])
    }

    /// Builds parameters from a flat slice laid out as (omega, alphas, betas).
    pub fn from_slice(order: GarchOrder, theta: &[f64]) -> Result<Self> {
        if theta.len() != order.dim() {
            return Err(Error::Parameter(format!(
                "expected {} parameters for order ({},{}), got {}",
                order.dim(),
                order.p,
                order.q,
                theta.len()
            )));
        }
        Self::new(theta[0], theta[1..1 + order.p].to_vec(), theta[1 + order.p..].to_vec())
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn order(&self) -> GarchOrder {
        GarchOrder { p: self.alpha.len(), q: self.beta.len() }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.order().dim());
        v.push(self.omega);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v
    }

    /// Sum of all alpha and beta coefficients.
    pub fn persistence(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.beta.iter().sum::<f64>()
    }

    /// omega / (1 - persistence), or `None` when the sum reaches one.
    pub fn unconditional_variance(&self) -> Option<f64> {
        let s = self.persistence();
        (s < 1.0).then(|| self.omega / (1.0 - s))
    }
}

/// Innovation distribution, always standardized to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnovationDist {
    #[default]
    StandardNormal,
    /// Student t with `nu` degrees of freedom, scaled by sqrt((nu-2)/nu).
    StudentT { nu: f64 },
}

impl InnovationDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InnovationDist::StandardNormal => Ok(()),
            InnovationDist::StudentT { nu } if nu.is_finite() && nu > 2.0 => Ok(()),
            InnovationDist::StudentT { nu } => {
                Err(Error::Parameter(format!("Student t innovations need nu > 2, got {nu}")))
            }
        }
    }
}

/// Innovation-outlier contamination: with probability `prob` the innovation
/// is pushed by `magnitude` away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ContaminationSpec {
    pub prob: f64,
    pub magnitude: f64,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(prob: f64, magnitude: f64) -> Result<Self> {
        let spec = Self { prob, magnitude };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::Parameter(format!("contamination prob must lie in [0,1], got {}", self.prob)));
        }
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(Error::Parameter(format!("contamination magnitude must be >= 0, got {}", self.magnitude)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.prob > 0.0 && self.magnitude > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    /// Simulated path; `shifted` counts contaminated innovations among the retained values.
    Simulated {
        seed: u64,
        shifted: usize,
    },
    Ingested {
        path: String,
    },
    InMemory,
}

/// Percent log-returns (observed or simulated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    values: Vec<f64>,
    pub label: Option<String>,
    pub origin: Origin,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_origin(values, Origin::InMemory)
    }

    pub fn with_origin(values: Vec<f64>, origin: Origin) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("return series is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("return series has a non-finite value at index {i}")));
        }
        Ok(Self { values, label: None, origin })
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy of the first `n` values (n clamped to the length).
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let mut s = Self::with_origin(self.values[..n.min(self.len())].to_vec(), self.origin.clone())?;
        s.label = self.label.clone();
        Ok(s)
    }
}

/// Proxy conditional variances, one per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariancePath {
    pub values: Vec<f64>,
}

pub(crate) fn check_finite(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Input("series is empty".into()));
    }
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Input(format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Proxy recursion without input validation. Every pre-sample squared return
/// and variance is set to the first squared observation.
pub(crate) fn proxy_variances(params: &GarchParams, x: &[f64]) -> Vec<f64> {
    let p = params.alpha.len();
    let q = params.beta.len();
    let init = x[0] * x[0];
    let mut s2 = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let mut v = params.omega;
        for (i, a) in params.alpha.iter().enumerate() {
            let lag = i + 1;
            v += a * if t >= lag { x[t - lag] * x[t - lag] } else { init };
        }
        for (j, b) in params.beta.iter().enumerate() {
            let lag = j + 1;
            v += b * if t >= lag { s2[t - lag] } else { init };
        }
        s2.push(v);
    }
    debug_assert!(p + q >= 1);
    s2
}

/// Conditional-variance proxy for `series` under `params`.
pub fn variance_recursion(params: &GarchParams, series: &[f64]) -> Result<VariancePath> {
    check_finite(series)?;
    Ok(VariancePath { values: proxy_variances(params, series) })
}

/// Next value of the proxy recursion after the whole of `series`, i.e. the
/// one-step-ahead conditional variance.
pub(crate) fn next_variance(params: &GarchParams, series: &[f64], path: &[f64]) -> f64 {
    let n = series.len();
    let init = series[0] * series[0];
    let mut v = params.omega;
    for (i, a) in params.alpha.iter().enumerate() {
        let lag = i + 1;
        v += a * if n >= lag { series[n - lag] * series[n - lag] } else { init };
    }
    for (j, b) in params.beta.iter().enumerate() {
        let lag = j + 1;
        v += b * if n >= lag { path[n - lag] } else { init };
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stationarity {
    /// sum(alpha) + sum(beta) < 1.
    pub sufficient_strict: bool,
    /// sum(beta) < 1.
    pub g1_holds: bool,
}

pub fn check_stationarity(params: &GarchParams) -> Stationarity {
    Stationarity { sufficient_strict: params.persistence() < 1.0, g1_holds: params.beta.iter().sum::<f64>() < 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub burn_in: usize,
    pub dist: InnovationDist,
    pub contamination: ContaminationSpec,
    pub seed: u64,
    /// Proceed (with a log warning) when sum(alpha)+sum(beta) >= 1.
    pub allow_nonstationary: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            dist: InnovationDist::StandardNormal,
            contamination: ContaminationSpec::none(),
            seed: 0,
            allow_nonstationary: false,
        }
    }
}

impl SimulationOptions {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Simulates `n` returns after discarding `burn_in` warm-up values.
pub fn simulate(params: &GarchParams, n: usize, opts: &SimulationOptions) -> Result<ReturnSeries> {
    if n == 0 {
        return Err(Error::Input("simulation length must be positive".into()));
    }
    opts.dist.validate()?;
    opts.contamination.validate()?;
    if !check_stationarity(params).sufficient_strict {
        if !opts.allow_nonstationary {
            return Err(Error::Parameter(format!(
                "persistence {} >= 1 violates the stationarity condition; pass the override to proceed",
                params.persistence()
            )));
        }
        log::warn!("simulating with persistence {} >= 1", params.persistence());
    }

    let mut innov_rng = stream_rng(opts.seed, STREAM_INNOVATIONS);
    let mut contam_rng = stream_rng(opts.seed, STREAM_CONTAMINATION);
    let t_dist = match opts.dist {
        InnovationDist::StudentT { nu } => {
            Some((StudentT::new(nu).map_err(|e| Error::Parameter(e.to_string()))?, ((nu - 2.0) / nu).sqrt()))
        }
        InnovationDist::StandardNormal => None,
    };

    let p = params.alpha.len();
    let q = params.beta.len();
    let warm = params.unconditional_variance().unwrap_or(params.omega);
    // Ring buffers of the most recent squared returns and variances, newest first.
    let mut x2_lags = vec![warm; p.max(1)];
    let mut s2_lags = vec![warm; q.max(1)];

    let total = opts.burn_in + n;
    let mut out = Vec::with_capacity(n);
    let mut shifted = 0usize;
    for t in 0..total {
        let mut s2 = params.omega;
        for i in 0..p {
            s2 += params.alpha[i] * x2_lags[i];
        }
        for j in 0..q {
            s2 += params.beta[j] * s2_lags[j];
        }
        let base: f64 = match &t_dist {
            None => StandardNormal.sample(&mut innov_rng),
            Some((dist, scale)) => dist.sample(&mut innov_rng) * scale,
        };
        let u: f64 = contam_rng.random();
        let hit = opts.contamination.is_active() && u < opts.contamination.prob;
        let eps = if hit { base + opts.contamination.magnitude * sign(base) } else { base };
        let x = s2.sqrt() * eps;

        x2_lags.rotate_right(1);
        x2_lags[0] = x * x;
        s2_lags.rotate_right(1);
        s2_lags[0] = s2;

        if t >= opts.burn_in {
            if hit {
                shifted += 1;
            }
            out.push(x);
        }
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("simulated path diverged at index {i}")));
    }
    ReturnSeries::with_origin(out, Origin::Simulated { seed: opts.seed, shifted })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn theta1() -> GarchParams {
        GarchParams::garch11(1.0, 0.2, 0.4).unwrap()
    }

    #[test]
    fn hand_recursion_example() {
        let path = variance_recursion(&theta1(), &[2.0, 1.0]).unwrap();
        assert!((path.values[0] - 3.4).abs() < 1e-12);
        assert!((path.values[1] - 3.16).abs() < 1e-12);
    }

    #[test]
    fn no_feedback_gives_constant_path() {
        let params = GarchParams::garch11(0.7, 0.0, 0.0).unwrap();
        let path = variance_recursion(&params, &[3.0, -1.0, 0.5, 8.0]).unwrap();
        assert!(path.values.iter().all(|v| *v == 0.7));
    }

    /// Straight-loop oracle with explicit pre-sample arrays.
    fn oracle(omega: f64, alpha: &[f64], beta: &[f64], x: &[f64]) -> Vec<f64> {
        let (p, q) = (alpha.len(), beta.len());
        let init = x[0] * x[0];
        let mut xx = vec![init; p];
        xx.extend(x.iter().map(|v| v * v));
        let mut ss = vec![init; q];
        for t in 0..x.len() {
            let mut v = omega;
            for i in 1..=p {
                v += alpha[i - 1] * xx[p + t - i];
            }
            for j in 1..=q {
                v += beta[j - 1] * ss[q + t - j];
            }
            ss.push(v);
        }
        ss[q..].to_vec()
    }

    #[test]
    fn garch22_matches_loop_oracle() {
        let mut rng = stream_rng(11, 0);
        let alpha = vec![rng.random_range(0.0..0.2), rng.random_range(0.0..0.2)];
        let beta = vec![rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let params = GarchParams::new(0.5, alpha.clone(), beta.clone()).unwrap();
        let got = variance_recursion(&params, &x).unwrap().values;
        let want = oracle(0.5, &alpha, &beta, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!(((g - w) / w).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(matches!(variance_recursion(&theta1(), &[1.0, f64::NAN]), Err(Error::Input(_))));
        assert!(matches!(variance_recursion(&theta1(), &[]), Err(Error::Input(_))));
    }

    #[test]
    fn next_variance_continues_the_recursion() {
        let params = theta1();
        let x = [2.0, 1.0];
        let path = proxy_variances(&params, &x);
        let next = next_variance(&params, &x, &path);
        assert!((next - 2.464).abs() < 1e-12);
        let extended = proxy_variances(&params, &[2.0, 1.0, 123.0]);
        assert!((extended[2] - next).abs() < 1e-12);
    }

    #[test]
    fn stationarity_checks() {
        let s = check_stationarity(&GarchParams::garch11(1.0, 0.15, 0.8).unwrap());
        assert!(s.sufficient_strict && s.g1_holds);
        let s = check_stationarity(&GarchParams::garch11(1.0, 0.6, 0.5).unwrap());
        assert!(!s.sufficient_strict && s.g1_holds);
        let s = check_stationarity(&GarchParams::garch11(1.0, 0.0, 0.0).unwrap());
        assert!(s.sufficient_strict && s.g1_holds);
    }

    #[test]
    fn parameter_validation() {
        assert!(GarchParams::garch11(0.0, 0.1, 0.1).is_err());
        assert!(GarchParams::garch11(1.0, -0.1, 0.1).is_err());
        assert!(GarchParams::new(1.0, vec![], vec![]).is_err());
        assert!(GarchParams::new(1.0, vec![0.0; 11], vec![]).is_err());
        assert!(GarchOrder::new(0, 1).is_ok());
        let p = GarchParams::from_slice(GarchOrder::new(2, 1).unwrap(), &[1.0, 0.1, 0.2, 0.3]).unwrap();
        assert_eq!(p.alpha(), &[0.1, 0.2]);
        assert_eq!(p.beta(), &[0.3]);
    }

    #[test]
    fn params_serde_validates() {
        let ok: GarchParams = serde_json::from_str(r#"{"omega":1.0,"alpha":[0.2],"beta":[0.4]}"#).unwrap();
        assert_eq!(ok, theta1());
        assert!(serde_json::from_str::<GarchParams>(r#"{"omega":-1.0,"alpha":[0.2],"beta":[0.4]}"#).is_err());
    }

    #[test]
    fn simulate_length_and_determinism() {
        let opts = SimulationOptions::seeded(7);
        let a = simulate(&theta1(), 500, &opts).unwrap();
        let b = simulate(&theta1(), 500, &opts).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_variance_near_unconditional() {
        // omega / (1 - alpha - beta) = 2.5
        let mut hits = 0;
        for seed in 0..20 {
            let s = simulate(&theta1(), 500, &SimulationOptions::seeded(seed)).unwrap();
            let x = s.values();
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
            if (v - 2.5).abs() <= 0.3 * 2.5 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "only {hits}/20 seeds within 30%");
    }

    #[test]
    fn zero_contamination_identities() {
        let clean = simulate(&theta1(), 300, &SimulationOptions::seeded(3)).unwrap();
        for c in [ContaminationSpec { prob: 0.0, magnitude: 5.0 }, ContaminationSpec { prob: 0.3, magnitude: 0.0 }] {
            let opts = SimulationOptions { contamination: c, ..SimulationOptions::seeded(3) };
            let s = simulate(&theta1(), 300, &opts).unwrap();
            assert_eq!(s.values(), clean.values());
        }
    }

    #[test]
    fn contamination_rate_is_binomial() {
        let opts = SimulationOptions {
            contamination: ContaminationSpec::new(0.01, 5.0).unwrap(),
            ..SimulationOptions::seeded(5)
        };
        let s = simulate(&theta1(), 10_000, &opts).unwrap();
        let Origin::Simulated { shifted, .. } = s.origin else { panic!("wrong origin") };
        let frac = shifted as f64 / 10_000.0;
        assert!((0.005..=0.015).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn nonstationary_needs_override() {
        let params = GarchParams::garch11(1.0, 0.6, 0.5).unwrap();
        assert!(matches!(simulate(&params, 10, &SimulationOptions::default()), Err(Error::Parameter(_))));
        let opts = SimulationOptions { allow_nonstationary: true, burn_in: 10, ..SimulationOptions::default() };
        assert_eq!(simulate(&params, 10, &opts).unwrap().len(), 10);
    }

    #[test]
    fn student_t_innovations_have_unit_variance() {
        let params = GarchParams::garch11(1.0, 0.0, 0.0).unwrap();
        let opts = SimulationOptions { dist: InnovationDist::StudentT { nu: 7.0 }, ..SimulationOptions::seeded(1) };
        let s = simulate(&params, 200_000, &opts).unwrap();
        let v = s.values().iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((v - 1.0).abs() < 0.03, "variance {v}");
        let bad = SimulationOptions { dist: InnovationDist::StudentT { nu: 2.0 }, ..SimulationOptions::default() };
        assert!(simulate(&params, 10, &bad).is_err());
    }

    proptest! {
        #[test]
        fn variances_bounded_below_by_omega(
            omega in 0.01f64..5.0, a in 0.0f64..0.5, b in 0.0f64..0.49,
            x in prop::collection::vec(-10.0f64..10.0, 1..60)
        ) {
            let params = GarchParams::garch11(omega, a, b).unwrap();
            let path = variance_recursion(&params, &x).unwrap();
            prop_assert!(path.values.iter().all(|v| *v >= omega));
            prop_assert_eq!(path.values.len(), x.len());
        }

        #[test]
        fn recursion_is_scale_consistent(
            omega in 0.01f64..5.0, a in 0.0f64..0.5, b in 0.0f64..0.49, c in 0.1f64..10.0,
            x in prop::collection::vec(-10.0f64..10.0, 1..40)
        ) {
            let base = variance_recursion(&GarchParams::garch11(omega, a, b).unwrap(), &x).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
            let scaled = variance_recursion(&GarchParams::garch11(c * c * omega, a, b).unwrap(), &xs).unwrap();
            for (s, v) in scaled.values.iter().zip(&base.values) {
                prop_assert!((s - c * c * v).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }

        #[test]
        fn recursion_matches_oracle_for_general_orders(
            p in 0usize..4, q in 0usize..4, seed in 0u64..1000, n in 1usize..80
        ) {
            prop_assume!(p + q >= 1);
            let mut rng = stream_rng(seed, 9);
            let alpha: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..0.2)).collect();
            let beta: Vec<f64> = (0..q).map(|_| rng.random_range(0.0..0.2)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let got = variance_recursion(&GarchParams::new(0.3, alpha.clone(), beta.clone()).unwrap(), &x).unwrap();
            let want = oracle(0.3, &alpha, &beta, &x);
            for (g, w) in got.values.iter().zip(&want) {
                prop_assert!(((g - w) / w).abs() <= 1e-12);
            }
        }
    }
}
