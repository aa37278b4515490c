//! Split R-hat and autocorrelation-based effective sample size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Split R-hat per parameter.
    pub rhat: Vec<f64>,
    /// Effective sample size per parameter.
    pub ess: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic split R-hat: every chain is cut in half and the between/within
/// variance ratio is taken over the 2m halves.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    check_shape(chains)?;
    let half = chains[0].len() / 2;
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        // An odd middle element is dropped.
        pieces.push(&c[..half]);
        pieces.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|c| mean(c)).collect();
    let w = pieces.iter().map(|c| sample_var(c)).sum::<f64>() / pieces.len() as f64;
    let b_over_n = sample_var(&means);
    if w <= 0.0 {
        // Constant draws in every half: identical chains have nothing to disagree on.
        return Ok(if b_over_n > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence
/// truncation of the combined autocorrelation, capped at the total number of
/// draws.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    check_shape(chains)?;
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;

    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = chains.iter().zip(&means).map(|(c, mu)| c.iter().map(|v| v - mu).collect()).collect();
    let autocov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };

    let acov0 = autocov(0);
    let mean_var = acov0 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if var_plus <= 0.0 {
        return Ok(total);
    }
    let rho = |lag: usize| -> f64 {
        if lag == 0 {
            1.0
        } else {
            1.0 - (mean_var - autocov(lag)) / var_plus
        }
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / total.log10().max(1.0));
    Ok((total / tau).min(total))
}

fn check_shape(chains: &[&[f64]]) -> Result<()> {
    if chains.is_empty() {
        return Err(Error::Diagnostic("no chains".into()));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::Diagnostic(format!("need at least 4 draws per chain, got {n}")));
    }
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostic("chains have unequal lengths".into()));
    }
    if chains.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Diagnostic("non-finite draw".into()));
    }
    Ok(())
}

/// Diagnostics for `draws[chain][iteration][parameter]`. Needs at least two
/// chains of four draws each.
pub fn diagnostics_from_matrix(draws: &[Vec<Vec<f64>>]) -> Result<Diagnostics> {
    if draws.len() < 2 {
        return Err(Error::Diagnostic(format!("need at least 2 chains, got {}", draws.len())));
    }
    let d = draws[0].first().map(|r| r.len()).ok_or_else(|| Error::Diagnostic("empty chain".into()))?;
    let mut rhat = Vec::with_capacity(d);
    let mut ess = Vec::with_capacity(d);
    for k in 0..d {
        let cols: Vec<Vec<f64>> = draws.iter().map(|c| c.iter().map(|row| row[k]).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        rhat.push(split_rhat(&refs)?);
        ess.push(effective_sample_size(&refs)?);
    }
    Ok(Diagnostics { rhat, ess })
}
