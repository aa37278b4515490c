//! Prior on GARCH(1,1) parameters and the unconstrained reparameterization
//! used by the optimizer and the sampler.
//!
//! The prior is a truncated normal on omega times a flat density on the
//! stationary region {alpha >= 0, beta >= 0, alpha + beta < 1}.
//!
//! Unconstrained coordinates `z` map onto the interior as
//! omega = exp(z_0), persistence s = logistic(z_1), and the coefficients
//! (alpha_1..alpha_p, beta_1..beta_q) = s * softmax(z_2.., 0). For GARCH(1,1)
//! the split reduces to r = logistic(z_2), alpha = s r, beta = s (1 - r).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{GarchOrder, GarchParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu_w: f64,
    pub sigma_w: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mu_w: 1.0, sigma_w: 5.0 }
    }
}

impl PriorSpec {
    pub fn new(mu_w: f64, sigma_w: f64) -> Result<Self> {
        let spec = Self { mu_w, sigma_w };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w.is_finite() && self.sigma_w > 0.0 && self.mu_w.is_finite()) {
            return Err(Error::Parameter(format!(
                "prior needs finite mu_w and sigma_w > 0, got ({}, {})",
                self.mu_w, self.sigma_w
            )));
        }
        Ok(())
    }
}

fn require_garch11(order: GarchOrder) -> Result<()> {
    if order != GarchOrder::garch11() {
        return Err(Error::Parameter(format!(
            "the prior is defined for GARCH(1,1) only, got ({},{})",
            order.p, order.q
        )));
    }
    Ok(())
}

/// Unnormalized log prior density; `-inf` outside the support.
pub fn log_prior(params: &GarchParams, spec: &PriorSpec) -> Result<f64> {
    require_garch11(params.order())?;
    let (a, b) = (params.alpha()[0], params.beta()[0]);
    if !(params.omega() > 0.0 && a >= 0.0 && b >= 0.0 && a + b < 1.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let dz = params.omega() - spec.mu_w;
    Ok(-dz * dz / (2.0 * spec.sigma_w * spec.sigma_w))
}

/// d log_prior / d omega inside the support.
pub(crate) fn log_prior_slope_omega(omega: f64, spec: &PriorSpec) -> f64 {
    -(omega - spec.mu_w) / (spec.sigma_w * spec.sigma_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedPoint {
    pub z: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(logistic(x)), stable for large |x|.
fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Bijection between the interior of the parameter space of one GARCH order
/// and R^(1+p+q).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reparam {
    order: GarchOrder,
}

/// Constrained image of an unconstrained point with its Jacobian terms.
#[derive(Debug, Clone)]
pub struct Mapped {
    pub params: GarchParams,
    /// log |det d theta / d z|.
    pub log_jacobian: f64,
    /// Row-major d x d matrix d theta_i / d z_j.
    pub jacobian: Vec<f64>,
    /// Gradient of `log_jacobian` with respect to z.
    pub log_jacobian_grad: Vec<f64>,
}

impl Mapped {
    /// Pulls a gradient with respect to theta back to z.
    pub fn pull_back(&self, grad_theta: &[f64]) -> Vec<f64> {
        let d = grad_theta.len();
        (0..d).map(|j| (0..d).map(|i| self.jacobian[i * d + j] * grad_theta[i]).sum()).collect()
    }
}

impl Reparam {
    pub fn new(order: GarchOrder) -> Self {
        Self { order }
    }

    pub fn order(&self) -> GarchOrder {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.order.dim()
    }

    /// Requires omega > 0, every coefficient > 0 and their sum < 1.
    pub fn to_unconstrained(&self, params: &GarchParams) -> Result<UnconstrainedPoint> {
        if params.order() != self.order {
            return Err(Error::Domain("parameter order does not match the reparameterization".into()));
        }
        let theta = params.to_vec();
        let coefs = &theta[1..];
        let s: f64 = coefs.iter().sum();
        if !(theta[0] > 0.0 && coefs.iter().all(|c| *c > 0.0) && s < 1.0) {
            return Err(Error::Domain(format!("point {theta:?} is on the boundary or outside the stationary region")));
        }
        let mut z = Vec::with_capacity(theta.len());
        z.push(theta[0].ln());
        z.push(s.ln() - (1.0 - s).ln());
        let last = coefs[coefs.len() - 1].ln();
        z.extend(coefs[..coefs.len() - 1].iter().map(|c| c.ln() - last));
        Ok(UnconstrainedPoint { z })
    }

    /// Maps `z` to parameters, also returning the Jacobian and log-Jacobian.
    pub fn to_constrained(&self, z: &[f64]) -> Result<Mapped> {
        let d = self.dim();
        if z.len() != d {
            return Err(Error::Domain(format!("expected {d} unconstrained coordinates, got {}", z.len())));
        }
        if let Some(v) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite unconstrained coordinate {v}")));
        }
        let m = d - 1;
        let omega = z[0].exp();
        let s = logistic(z[1]);
        let log_s = log_logistic(z[1]);
        let log_1ms = log_logistic(-z[1]);

        // Softmax over (z_2.., 0).
        let logits: Vec<f64> = z[2..].iter().copied().chain(std::iter::once(0.0)).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        let log_pi: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();

        let mut theta = Vec::with_capacity(d);
        theta.push(omega);
        theta.extend(pi.iter().map(|w| s * w));

        let mut jac = vec![0.0; d * d];
        jac[0] = omega;
        let ds = s * (1.0 - s);
        for k in 0..m {
            let row = (1 + k) * d;
            jac[row + 1] = ds * pi[k];
            for j in 0..m.saturating_sub(1) {
                let delta = if k == j { 1.0 } else { 0.0 };
                jac[row + 2 + j] = s * pi[k] * (delta - pi[j]);
            }
        }

        let log_jacobian = z[0] + log_s + log_1ms + (m as f64 - 1.0) * log_s + log_pi.iter().sum::<f64>();
        let mut lj_grad = vec![0.0; d];
        lj_grad[0] = 1.0;
        lj_grad[1] = m as f64 * (1.0 - s) - s;
        for j in 0..m.saturating_sub(1) {
            lj_grad[2 + j] = 1.0 - m as f64 * pi[j];
        }

        let params = GarchParams::from_slice(self.order, &theta)?;
        Ok(Mapped { params, log_jacobian, jacobian: jac, log_jacobian_grad: lj_grad })
    }
}

/// GARCH(1,1) convenience wrapper.
pub fn to_unconstrained(params: &GarchParams) -> Result<UnconstrainedPoint> {
    require_garch11(params.order())?;
    Reparam::new(GarchOrder::garch11()).to_unconstrained(params)
}

/// GARCH(1,1) convenience wrapper returning (params, log_jacobian).
pub fn to_constrained(z: &UnconstrainedPoint) -> Result<(GarchParams, f64)> {
    let m = Reparam::new(GarchOrder::garch11()).to_constrained(&z.z)?;
    Ok((m.params, m.log_jacobian))
}
