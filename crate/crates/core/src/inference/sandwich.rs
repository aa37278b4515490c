//! Sandwich covariance J^-1 I J^-1 / n of the minimum-DPD estimator.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{check_finite, GarchParams};
use crate::objective::{Gamma, Objective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCovariance {
    /// Negative mean Hessian of the per-observation objective (row-major d x d).
    pub j_hat: Vec<Vec<f64>>,
    /// Mean outer product of per-observation gradients.
    pub i_hat: Vec<Vec<f64>>,
    /// J^-1 I J^-1 / n.
    pub cov: Vec<Vec<f64>>,
    pub n: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

impl SandwichCovariance {
    /// Square roots of the diagonal of `cov`.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.cov.len()).map(|k| self.cov[k][k].max(0.0).sqrt()).collect()
    }

    /// J^-1 / n, the covariance a Bernstein-von Mises approximation assigns
    /// to the pseudo-posterior.
    pub fn posterior_covariance(&self) -> Vec<Vec<f64>> {
        let j = from_rows(&self.j_hat);
        let inv =
            j.try_inverse().unwrap_or_else(|| DMatrix::from_element(self.j_hat.len(), self.j_hat.len(), f64::NAN));
        to_rows(&(inv / self.n as f64))
    }
}

/// Estimates J and I at `params_hat` for the DPD objective at `gamma`.
pub fn sandwich_covariance(series: &[f64], params_hat: &GarchParams, gamma: Gamma) -> Result<SandwichCovariance> {
    check_finite(series)?;
    let theta = params_hat.to_vec();
    let d = theta.len();
    let coefs = &theta[1..];
    if !(theta[0] > 0.0 && coefs.iter().all(|c| *c > 0.0)) {
        return Err(Error::Domain(format!("sandwich covariance needs an interior estimate, got {theta:?}")));
    }
    let n = series.len();
    let obj = Objective::dpd(gamma);
    let order = params_hat.order();

    let rows = obj.per_term_gradients(params_hat, series);
    let mut i_hat = DMatrix::<f64>::zeros(d, d);
    for g in &rows {
        for a in 0..d {
            for b in 0..d {
                i_hat[(a, b)] += g[a] * g[b];
            }
        }
    }
    i_hat /= n as f64;

    // Sum over t of the per-term Hessians equals the Hessian of the total.
    let mut h = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        let step = 1e-5 * theta[k].abs().max(1e-3);
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[k] += step;
        dn[k] -= step;
        let (gu, gd, width) = if dn[k] > 0.0 {
            let gu = obj.value_and_gradient_unchecked(&GarchParams::from_slice(order, &up)?, series).1;
            let gd = obj.value_and_gradient_unchecked(&GarchParams::from_slice(order, &dn)?, series).1;
            (gu, gd, 2.0 * step)
        } else {
            let gu = obj.value_and_gradient_unchecked(&GarchParams::from_slice(order, &up)?, series).1;
            let g0 = obj.value_and_gradient_unchecked(params_hat, series).1;
            (gu, g0, step)
        };
        for a in 0..d {
            h[(a, k)] = (gu[a] - gd[a]) / width;
        }
    }
    let j_hat = -(&h + h.transpose()) * (0.5 / n as f64);

    let eig = SymmetricEigen::new(j_hat.clone()).eigenvalues;
    if eig.iter().any(|e| *e <= 0.0) {
        return Err(Error::Covariance {
            message: "estimated J is not positive definite".into(),
            eigenvalues: eig.iter().cloned().collect(),
        });
    }
    let j_inv = j_hat.clone().try_inverse().ok_or_else(|| Error::Covariance {
        message: "J is singular".into(),
        eigenvalues: eig.iter().cloned().collect(),
    })?;
    let cov = &j_inv * &i_hat * &j_inv / n as f64;
    let cov = (&cov + cov.transpose()) * 0.5;

    Ok(SandwichCovariance { j_hat: to_rows(&j_hat), i_hat: to_rows(&i_hat), cov: to_rows(&cov), n })
}
