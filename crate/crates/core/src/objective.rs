//! Conditional log-likelihoods and the density power divergence (DPD)
//! objective for GARCH models, with exact gradients.
//!
//! Every per-observation term depends on the parameters only through the
//! proxy variance `s = sigma_t^2`, so each objective is a [`TermKernel`]
//! (value and d/ds of one term) combined with a forward-mode recursion for
//! d sigma_t^2 / d theta.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::garch::{check_finite, GarchParams};

/// DPD tuning parameter. Zero selects the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Gamma(f64);

impl Gamma {
    pub const ZERO: Gamma = Gamma(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Parameter(format!("gamma must be finite and >= 0, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Gamma {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Gamma::new(v)
    }
}

impl From<Gamma> for f64 {
    fn from(g: Gamma) -> f64 {
        g.0
    }
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed form of the integral of phi(x)^(1+gamma) over the real line for the
/// standard normal density phi.
pub fn normal_power_integral(gamma: f64) -> f64 {
    (2.0 * PI).powf(-gamma / 2.0) * (1.0 + gamma).powf(-0.5)
}

/// Additive shift n(1/gamma - 1) that makes the DPD objective converge to the
/// log-likelihood as gamma goes to zero.
pub fn dpd_shift(n: usize, gamma: Gamma) -> f64 {
    n as f64 * (1.0 / gamma.value() - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub total: f64,
    pub per_term: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    /// Ordered (omega, alpha_1..alpha_p, beta_1..beta_q).
    pub values: Vec<f64>,
}

impl std::ops::Deref for GradientVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl GradientVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Value of a single observation's contribution as a function of its
/// conditional variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKernel {
    Gaussian,
    Dpd {
        gamma: f64,
        /// (1+gamma)^(-3/2), i.e. the normal power integral scaled by
        /// (2 pi)^(gamma/2) / (1+gamma).
        tail: f64,
    },
    StudentT {
        nu: f64,
        log_norm: f64,
    },
}

impl TermKernel {
    pub fn dpd(gamma: Gamma) -> Self {
        if gamma.is_zero() {
            return TermKernel::Gaussian;
        }
        let g = gamma.value();
        let integral = normal_power_integral(g);
        TermKernel::Dpd { gamma: g, tail: integral * (2.0 * PI).powf(g / 2.0) / (1.0 + g) }
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 2.0) {
            return Err(Error::Parameter(format!("Student t likelihood needs nu > 2, got {nu}")));
        }
        let log_norm = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * ((nu - 2.0) * PI).ln();
        Ok(TermKernel::StudentT { nu, log_norm })
    }

    #[inline]
    pub fn value(&self, s2: f64, x2: f64) -> f64 {
        match *self {
            TermKernel::Gaussian => -0.5 * (2.0 * PI * s2).ln() - x2 / (2.0 * s2),
            TermKernel::Dpd { gamma, tail } => {
                let w = (-0.5 * gamma * (2.0 * PI * s2).ln()).exp();
                w * ((-gamma * x2 / (2.0 * s2)).exp() / gamma - tail)
            }
            TermKernel::StudentT { nu, log_norm } => {
                log_norm - 0.5 * s2.ln() - 0.5 * (nu + 1.0) * (x2 / ((nu - 2.0) * s2)).ln_1p()
            }
        }
    }

    /// Value and derivative with respect to `s2`.
    #[inline]
    pub fn value_and_slope(&self, s2: f64, x2: f64) -> (f64, f64) {
        match *self {
            TermKernel::Gaussian => {
                let v = -0.5 * (2.0 * PI * s2).ln() - x2 / (2.0 * s2);
                (v, -0.5 / s2 + x2 / (2.0 * s2 * s2))
            }
            TermKernel::Dpd { gamma, tail } => {
                let w = (-0.5 * gamma * (2.0 * PI * s2).ln()).exp();
                let e = (-gamma * x2 / (2.0 * s2)).exp();
                let v = w * (e / gamma - tail);
                let d = w * ((gamma * tail - e) / (2.0 * s2) + x2 * e / (2.0 * s2 * s2));
                (v, d)
            }
            TermKernel::StudentT { nu, log_norm } => {
                let k = x2 / ((nu - 2.0) * s2);
                let v = log_norm - 0.5 * s2.ln() - 0.5 * (nu + 1.0) * k.ln_1p();
                let d = -0.5 / s2 + 0.5 * (nu + 1.0) * k / (s2 * (1.0 + k));
                (v, d)
            }
        }
    }
}

/// A summed objective: kernel plus an optional parameter-free shift
/// subtracted from the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kernel: TermKernel,
    /// If set, n(1/gamma - 1) is subtracted from the total.
    pub shifted: bool,
}

impl Objective {
    pub fn gaussian() -> Self {
        Self { kernel: TermKernel::Gaussian, shifted: false }
    }

    pub fn dpd(gamma: Gamma) -> Self {
        Self { kernel: TermKernel::dpd(gamma), shifted: false }
    }

    /// DPD objective minus n(1/gamma - 1); for gamma = 0 it is the log-likelihood.
    pub fn dpd_shifted(gamma: Gamma) -> Self {
        Self { kernel: TermKernel::dpd(gamma), shifted: !gamma.is_zero() }
    }

    pub fn student_t(nu: f64) -> Result<Self> {
        Ok(Self { kernel: TermKernel::student_t(nu)?, shifted: false })
    }

    fn shift(&self, n: usize) -> f64 {
        match (self.shifted, self.kernel) {
            (true, TermKernel::Dpd { gamma, .. }) => n as f64 * (1.0 / gamma - 1.0),
            _ => 0.0,
        }
    }

    /// Total objective without input validation.
    pub fn value_unchecked(&self, params: &GarchParams, x: &[f64]) -> f64 {
        let s2 = crate::garch::proxy_variances(params, x);
        let mut total = 0.0;
        for (s, xv) in s2.iter().zip(x) {
            total += self.kernel.value(*s, xv * xv);
        }
        total - self.shift(x.len())
    }

    pub fn evaluate(&self, params: &GarchParams, x: &[f64]) -> Result<ObjectiveValue> {
        check_finite(x)?;
        let s2 = crate::garch::proxy_variances(params, x);
        let per_term: Vec<f64> = s2.iter().zip(x).map(|(s, xv)| self.kernel.value(*s, xv * xv)).collect();
        let total = per_term.iter().sum::<f64>() - self.shift(x.len());
        Ok(ObjectiveValue { total, per_term: Some(per_term) })
    }

    /// Total objective and its gradient in (omega, alpha, beta) order, without
    /// input validation.
    pub fn value_and_gradient_unchecked(&self, params: &GarchParams, x: &[f64]) -> (f64, Vec<f64>) {
        let d = params.order().dim();
        let mut grad = vec![0.0; d];
        let mut total = 0.0;
        walk_terms(params, x, |_, s2, x2, ds| {
            let (v, slope) = self.kernel.value_and_slope(s2, x2);
            total += v;
            for (g, dk) in grad.iter_mut().zip(ds) {
                *g += slope * dk;
            }
        });
        (total - self.shift(x.len()), grad)
    }

    pub fn gradient(&self, params: &GarchParams, x: &[f64]) -> Result<GradientVector> {
        check_finite(x)?;
        Ok(GradientVector { values: self.value_and_gradient_unchecked(params, x).1 })
    }

    /// Gradient of every per-observation term, row-major n x d.
    pub fn per_term_gradients(&self, params: &GarchParams, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        walk_terms(params, x, |_, s2, x2, ds| {
            let (_, slope) = self.kernel.value_and_slope(s2, x2);
            out.push(ds.iter().map(|dk| slope * dk).collect());
        });
        out
    }
}

/// Runs the proxy recursion together with d sigma_t^2 / d theta and hands
/// (t, sigma_t^2, X_t^2, derivative) to `visit`. Pre-sample values are fixed
/// at X_1^2 and carry zero derivative.
fn walk_terms<F: FnMut(usize, f64, f64, &[f64])>(params: &GarchParams, x: &[f64], mut visit: F) {
    let alpha = params.alpha();
    let beta = params.beta();
    let (p, q) = (alpha.len(), beta.len());
    let d = 1 + p + q;
    let n = x.len();
    let init = x[0] * x[0];

    if p == 1 && q == 1 {
        let (omega, a, b) = (params.omega(), alpha[0], beta[0]);
        let (mut x2_prev, mut s2_prev) = (init, init);
        let mut ds = [0.0f64; 3];
        for (t, xv) in x.iter().enumerate() {
            let s2 = omega + a * x2_prev + b * s2_prev;
            ds = [1.0 + b * ds[0], x2_prev + b * ds[1], s2_prev + b * ds[2]];
            let x2 = xv * xv;
            visit(t, s2, x2, &ds);
            x2_prev = x2;
            s2_prev = s2;
        }
        return;
    }

    let mut s2 = Vec::with_capacity(n);
    let mut ds = vec![0.0f64; n * d];
    for t in 0..n {
        let mut v = params.omega();
        for (i, a) in alpha.iter().enumerate() {
            let lag = i + 1;
            v += a * if t >= lag { x[t - lag] * x[t - lag] } else { init };
        }
        for (j, b) in beta.iter().enumerate() {
            let lag = j + 1;
            v += b * if t >= lag { s2[t - lag] } else { init };
        }
        s2.push(v);

        let (head, row) = ds.split_at_mut(t * d);
        let row = &mut row[..d];
        row[0] = 1.0;
        for i in 0..p {
            let lag = i + 1;
            row[1 + i] = if t >= lag { x[t - lag] * x[t - lag] } else { init };
        }
        for j in 0..q {
            let lag = j + 1;
            row[1 + p + j] = if t >= lag { s2[t - lag] } else { init };
        }
        for (j, b) in beta.iter().enumerate() {
            let lag = j + 1;
            if t >= lag {
                let prev = &head[(t - lag) * d..(t - lag + 1) * d];
                for k in 0..d {
                    row[k] += b * prev[k];
                }
            }
        }
        visit(t, v, x[t] * x[t], row);
    }
}

/// Gaussian conditional log-likelihood.
pub fn gaussian_loglik(params: &GarchParams, series: &[f64]) -> Result<ObjectiveValue> {
    Objective::gaussian().evaluate(params, series)
}

/// DPD objective; gamma = 0 gives the Gaussian log-likelihood.
pub fn dpd_objective(params: &GarchParams, series: &[f64], gamma: Gamma) -> Result<ObjectiveValue> {
    Objective::dpd(gamma).evaluate(params, series)
}

/// DPD objective minus n(1/gamma - 1). Requires gamma > 0.
pub fn dpd_objective_shifted(params: &GarchParams, series: &[f64], gamma: Gamma) -> Result<ObjectiveValue> {
    if gamma.is_zero() {
        return Err(Error::Parameter("the shifted DPD objective needs gamma > 0".into()));
    }
    Objective::dpd_shifted(gamma).evaluate(params, series)
}

/// Log-likelihood with unit-variance Student t innovations.
pub fn student_t_loglik(params: &GarchParams, series: &[f64], nu: f64) -> Result<ObjectiveValue> {
    Objective::student_t(nu)?.evaluate(params, series)
}

/// Exact gradient of the DPD objective (log-likelihood when gamma = 0).
pub fn dpd_gradient(params: &GarchParams, series: &[f64], gamma: Gamma) -> Result<GradientVector> {
    Objective::dpd(gamma).gradient(params, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn theta1() -> GarchParams {
        GarchParams::garch11(1.0, 0.2, 0.4).unwrap()
    }

    fn normal_logpdf(x: f64, var: f64) -> f64 {
        -0.5 * (2.0 * PI * var).ln() - x * x / (2.0 * var)
    }

    #[test]
    fn gaussian_hand_example() {
        let v = gaussian_loglik(&theta1(), &[2.0, 1.0]).unwrap();
        let want = normal_logpdf(2.0, 3.4) + normal_logpdf(1.0, 3.16);
        assert!((v.total - want).abs() < 1e-12);
    }

    #[test]
    fn gaussian_zero_series_closed_form() {
        let params = GarchParams::garch11(2.5, 0.0, 0.0).unwrap();
        let v = gaussian_loglik(&params, &[0.0; 7]).unwrap();
        assert!((v.total + 7.0 * (2.0 * PI * 2.5).sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_matches_scalar_logpdf_oracle() {
        let mut rng = stream_rng(2, 0);
        let x: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let params = GarchParams::garch11(0.8, 0.1, 0.7).unwrap();
        let s2 = crate::garch::variance_recursion(&params, &x).unwrap().values;
        let want: f64 = x.iter().zip(&s2).map(|(xv, s)| normal_logpdf(*xv, *s)).sum();
        let got = gaussian_loglik(&params, &x).unwrap().total;
        assert!(((got - want) / want).abs() <= 1e-12);
    }

    #[test]
    fn dpd_hand_example() {
        let g = 0.5;
        let term = |x: f64, s: f64| {
            (2.0 * PI * s).powf(-g / 2.0) * ((-g * x * x / (2.0 * s)).exp() / g - (1.0 + g).powf(-1.5))
        };
        let want = term(2.0, 3.4) + term(1.0, 3.16);
        let got = dpd_objective(&theta1(), &[2.0, 1.0], Gamma::new(g).unwrap()).unwrap();
        assert!((got.total - want).abs() < 1e-12);
        let per = got.per_term.unwrap();
        assert!((per.iter().sum::<f64>() - got.total).abs() <= 1e-10 * got.total.abs());
    }

    #[test]
    fn dpd_zero_series_closed_form() {
        let (omega, g, n) = (1.7, 0.3, 9);
        let params = GarchParams::garch11(omega, 0.0, 0.0).unwrap();
        let got = dpd_objective(&params, &vec![0.0; n], Gamma::new(g).unwrap()).unwrap().total;
        let want = n as f64 * (2.0 * PI * omega).powf(-g / 2.0) * (1.0 / g - (1.0 + g).powf(-1.5));
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_delegates_to_loglik() {
        let x = [0.5, -1.5, 2.0, 0.1];
        let a = dpd_objective(&theta1(), &x, Gamma::ZERO).unwrap().total;
        let b = gaussian_loglik(&theta1(), &x).unwrap().total;
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_tail_constant_matches_closed_form() {
        for g in [0.05, 0.2, 1.0] {
            let TermKernel::Dpd { tail, .. } = TermKernel::dpd(Gamma::new(g).unwrap()) else { panic!() };
            assert!((tail - (1.0 + g).powf(-1.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn shifted_objective_subtracts_constant() {
        let x = [0.5, -1.5, 2.0, 0.1, 3.0];
        for g in [0.01, 0.3, 1.0] {
            let gamma = Gamma::new(g).unwrap();
            let a = dpd_objective(&theta1(), &x, gamma).unwrap().total;
            let b = dpd_objective_shifted(&theta1(), &x, gamma).unwrap().total;
            assert!((a - b - 5.0 * (1.0 / g - 1.0)).abs() < 1e-9);
        }
        let gamma = Gamma::new(1.0).unwrap();
        assert_eq!(
            dpd_objective(&theta1(), &x, gamma).unwrap().total,
            dpd_objective_shifted(&theta1(), &x, gamma).unwrap().total
        );
        assert!(dpd_objective_shifted(&theta1(), &x, Gamma::ZERO).is_err());
    }

    #[test]
    fn student_t_density_at_zero() {
        // sigma = 1: omega = 1, no feedback, X = 0.
        let params = GarchParams::garch11(1.0, 0.0, 0.0).unwrap();
        let got = student_t_loglik(&params, &[0.0], 5.0).unwrap().total;
        let want = (ln_gamma(3.0) - ln_gamma(2.5) - (3.0 * PI).sqrt().ln()).exp().ln();
        assert!((got - want).abs() < 1e-12);
        assert!(student_t_loglik(&params, &[0.0], 2.0).is_err());
    }

    #[test]
    fn student_t_scaling_against_scalar_oracle() {
        // Scalar oracle: standardized t density computed from the raw t pdf.
        let nu: f64 = 6.0;
        let oracle = |x: f64, sigma: f64| {
            let scale = ((nu - 2.0) / nu).sqrt();
            let z = x / (sigma * scale);
            let t = ln_gamma((nu + 1.0) / 2.0)
                - ln_gamma(nu / 2.0)
                - 0.5 * (nu * PI).ln()
                - (nu + 1.0) / 2.0 * (1.0 + z * z / nu).ln();
            t - (sigma * scale).ln()
        };
        for (x, sigma) in [(0.3, 1.0), (0.3, 2.0), (-2.5, 0.7)] {
            let params = GarchParams::garch11(sigma * sigma, 0.0, 0.0).unwrap();
            let got = student_t_loglik(&params, &[x], nu).unwrap().total;
            assert!((got - oracle(x, sigma)).abs() < 1e-12);
        }
    }

    #[test]
    fn student_t_large_nu_approaches_gaussian() {
        let mut rng = stream_rng(4, 0);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let params = GarchParams::garch11(0.5, 0.1, 0.6).unwrap();
        let t = student_t_loglik(&params, &x, 1e6).unwrap().per_term.unwrap();
        let g = gaussian_loglik(&params, &x).unwrap().per_term.unwrap();
        for (a, b) in t.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn loglik_gradient_zero_series() {
        let (omega, n) = (1.3, 11);
        let params = GarchParams::garch11(omega, 0.0, 0.0).unwrap();
        let g = dpd_gradient(&params, &vec![0.0; n], Gamma::ZERO).unwrap();
        assert!((g[0] + n as f64 / (2.0 * omega)).abs() < 1e-12);
    }

    fn central_difference(obj: &Objective, params: &GarchParams, x: &[f64]) -> Vec<f64> {
        let theta = params.to_vec();
        let order = params.order();
        (0..theta.len())
            .map(|k| {
                let h = 1e-5 * theta[k].abs().max(1e-2);
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fu = obj.value_unchecked(&GarchParams::from_slice(order, &up).unwrap(), x);
                let fd = obj.value_unchecked(&GarchParams::from_slice(order, &dn).unwrap(), x);
                (fu - fd) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kernel() {
        let mut rng = stream_rng(8, 0);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let params = GarchParams::new(0.7, vec![0.1, 0.05], vec![0.4, 0.2]).unwrap();
        for obj in [
            Objective::gaussian(),
            Objective::dpd(Gamma::new(0.25).unwrap()),
            Objective::dpd_shifted(Gamma::new(0.7).unwrap()),
            Objective::student_t(5.0).unwrap(),
        ] {
            let (_, g) = obj.value_and_gradient_unchecked(&params, &x);
            let fd = central_difference(&obj, &params, &x);
            let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * scale, "{obj:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn per_term_gradients_sum_to_total() {
        let x = [0.3, -2.0, 1.1, 0.0, 4.0, -0.4];
        let obj = Objective::dpd(Gamma::new(0.2).unwrap());
        let rows = obj.per_term_gradients(&theta1(), &x);
        let (_, total) = obj.value_and_gradient_unchecked(&theta1(), &x);
        for k in 0..3 {
            let s: f64 = rows.iter().map(|r| r[k]).sum();
            assert!((s - total[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn general_and_specialised_paths_agree() {
        // GARCH(1,1) takes the fixed-size fast path; pad to (1,2) with a zero
        // beta_2 to force the general path.
        let mut rng = stream_rng(5, 0);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = GarchParams::garch11(0.6, 0.15, 0.5).unwrap();
        let b = GarchParams::new(0.6, vec![0.15], vec![0.5, 0.0]).unwrap();
        let obj = Objective::dpd(Gamma::new(0.3).unwrap());
        let (va, ga) = obj.value_and_gradient_unchecked(&a, &x);
        let (vb, gb) = obj.value_and_gradient_unchecked(&b, &x);
        assert!(((va - vb) / va).abs() < 1e-12);
        for k in 0..3 {
            assert!((ga[k] - gb[k]).abs() <= 1e-12 * ga[k].abs().max(1.0));
        }
    }
}
