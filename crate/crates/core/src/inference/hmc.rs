//! Hamiltonian Monte Carlo for the ordinary, Student t and DPD-based
//! posteriors of GARCH(1,1).
//!
//! Sampling happens in the unconstrained coordinates of [`Reparam`]; the
//! log target is objective + log prior + log Jacobian. Each chain uses a
//! jittered fixed number of leapfrog steps, dual-averaging step size
//! adaptation, and a diagonal mass matrix estimated during warmup.
//!
//! Warmup layout (fractions of `warmup`):
//!   [0, 0.15)     step size only, unit mass
//!   [0.15, 0.5)   first mass window
//!   [0.5, 0.8)    second mass window; its variances become the final mass
//!   [0.8, 1.0)    step size re-adapted for the final mass

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnostics_from_matrix, Diagnostics};
use super::optimize::moment_start;
use crate::error::{Error, Result};
use crate::garch::{GarchOrder, GarchParams, ReturnSeries};
use crate::objective::{Gamma, Objective};
use crate::prior::{log_prior_slope_omega, PriorSpec, Reparam};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    #[default]
    Gaussian,
    StudentT {
        nu: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    /// Nominal leapfrog steps per transition; each transition draws its
    /// count uniformly from [0.8 L, 1.2 L].
    pub leapfrog_steps: usize,
    pub seed: u64,
    /// Run chains on the rayon pool.
    pub parallel_chains: bool,
    /// Post-warmup divergence fraction above which sampling fails.
    pub max_divergence_rate: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            warmup: 500,
            samples: 1000,
            target_accept: 0.8,
            leapfrog_steps: 32,
            seed: 0,
            parallel_chains: true,
            max_divergence_rate: 0.2,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.samples == 0 || self.leapfrog_steps == 0 {
            return Err(Error::Input("n_chains, samples and leapfrog_steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Input(format!("target_accept must lie in (0,1), got {}", self.target_accept)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    /// `draws[chain][iteration]`, constrained space.
    pub draws: Vec<Vec<GarchParams>>,
    pub accept_rate: Vec<f64>,
    pub divergence_count: Vec<usize>,
    /// Adapted step size per chain.
    pub step_size: Vec<f64>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn total(&self) -> usize {
        self.draws.iter().map(|c| c.len()).sum()
    }

    /// `[chain][iteration][parameter]` as plain numbers.
    pub fn as_matrix(&self) -> Vec<Vec<Vec<f64>>> {
        self.draws.iter().map(|c| c.iter().map(|p| p.to_vec()).collect()).collect()
    }

    /// Per-parameter standard deviation over all draws.
    pub fn std_dev(&self) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = self.draws.iter().flatten().map(|p| p.to_vec()).collect();
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        (0..d)
            .map(|k| {
                let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                (rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .collect()
    }
}

/// Log posterior density in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct LogTarget<'a> {
    x: &'a [f64],
    objective: Objective,
    prior: PriorSpec,
    reparam: Reparam,
}

impl<'a> LogTarget<'a> {
    pub fn new(x: &'a [f64], gamma: Gamma, prior: PriorSpec, likelihood: Likelihood) -> Result<Self> {
        let objective = match likelihood {
            Likelihood::Gaussian => Objective::dpd_shifted(gamma),
            Likelihood::StudentT { nu } => {
                if !gamma.is_zero() {
                    return Err(Error::Parameter(
                        "a Student t likelihood has no DPD counterpart; use gamma = 0".into(),
                    ));
                }
                Objective::student_t(nu)?
            }
        };
        prior.validate()?;
        Ok(Self { x, objective, prior, reparam: Reparam::new(GarchOrder::garch11()) })
    }

    /// Log density and gradient at `z`; `-inf` when the point cannot be evaluated.
    pub fn log_density_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let Ok(mapped) = self.reparam.to_constrained(z) else {
            return (f64::NEG_INFINITY, vec![0.0; z.len()]);
        };
        let params = &mapped.params;
        // The interior map keeps the indicator at one; only the omega factor varies.
        if !(params.persistence() < 1.0) {
            return (f64::NEG_INFINITY, vec![0.0; z.len()]);
        }
        let (q, mut g) = self.objective.value_and_gradient_unchecked(params, self.x);
        let dw = params.omega() - self.prior.mu_w;
        let lp = -dw * dw / (2.0 * self.prior.sigma_w * self.prior.sigma_w);
        g[0] += log_prior_slope_omega(params.omega(), &self.prior);
        let mut gz = mapped.pull_back(&g);
        for (a, b) in gz.iter_mut().zip(&mapped.log_jacobian_grad) {
            *a += b;
        }
        let total = q + lp + mapped.log_jacobian;
        if !total.is_finite() || gz.iter().any(|v| !v.is_finite()) {
            return (f64::NEG_INFINITY, vec![0.0; z.len()]);
        }
        (total, gz)
    }

    pub fn to_params(&self, z: &[f64]) -> Result<GarchParams> {
        Ok(self.reparam.to_constrained(z)?.params)
    }
}

/// Dual averaging of log step size toward a target acceptance statistic.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), target, h_bar: 0.0, log_eps_bar: 0.0, count: 0.0 }
    }

    /// Returns the next step size to try.
    fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1.0;
        let t = self.count;
        let eta = 1.0 / (t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        let log_eps = self.mu - t.sqrt() / Self::GAMMA * self.h_bar;
        let w = t.powf(-Self::KAPPA);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Transition {
    z: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
    accept_stat: f64,
    accepted: bool,
    divergent: bool,
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

fn hmc_step(
    target: &LogTarget,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    eps: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Transition {
    let d = z.len();
    let mut p: Vec<f64> = (0..d).map(|k| rng.sample::<f64, _>(StandardNormal) / inv_mass[k].sqrt()).collect();
    let kinetic = |p: &[f64]| 0.5 * p.iter().zip(inv_mass).map(|(pk, m)| m * pk * pk).sum::<f64>();
    let h0 = -logp + kinetic(&p);

    let mut zn = z.to_vec();
    let mut gn = grad.to_vec();
    let mut lpn = logp;
    let mut divergent = false;
    for _ in 0..steps {
        for k in 0..d {
            p[k] += 0.5 * eps * gn[k];
            zn[k] += eps * inv_mass[k] * p[k];
        }
        let (l, g) = target.log_density_and_gradient(&zn);
        lpn = l;
        gn = g;
        if !lpn.is_finite() {
            divergent = true;
            break;
        }
        for k in 0..d {
            p[k] += 0.5 * eps * gn[k];
        }
        if -lpn + kinetic(&p) - h0 > DIVERGENCE_THRESHOLD {
            divergent = true;
            break;
        }
    }
    let h1 = if divergent { f64::INFINITY } else { -lpn + kinetic(&p) };
    let accept_stat = if h1.is_finite() { (h0 - h1).exp().min(1.0) } else { 0.0 };
    let u: f64 = rng.random();
    if !divergent && u < accept_stat {
        Transition { z: zn, logp: lpn, grad: gn, accept_stat, accepted: true, divergent }
    } else {
        Transition { z: z.to_vec(), logp, grad: grad.to_vec(), accept_stat, accepted: false, divergent }
    }
}

/// Doubles or halves the step size until a single leapfrog step has
/// acceptance probability near one half.
fn initial_step_size(
    target: &LogTarget,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d = z.len();
    let p: Vec<f64> = (0..d).map(|k| rng.sample::<f64, _>(StandardNormal) / inv_mass[k].sqrt()).collect();
    let kinetic = |p: &[f64]| 0.5 * p.iter().zip(inv_mass).map(|(pk, m)| m * pk * pk).sum::<f64>();
    let h0 = -logp + kinetic(&p);
    let one_step = |eps: f64| -> f64 {
        let mut pp = p.clone();
        let mut zz = z.to_vec();
        for k in 0..d {
            pp[k] += 0.5 * eps * grad[k];
            zz[k] += eps * inv_mass[k] * pp[k];
        }
        let (l, g) = target.log_density_and_gradient(&zz);
        if !l.is_finite() {
            return f64::NEG_INFINITY;
        }
        for k in 0..d {
            pp[k] += 0.5 * eps * g[k];
        }
        h0 - (-l + kinetic(&pp))
    };
    let mut eps = 0.1;
    let mut delta = one_step(eps);
    let up = delta > (0.5f64).ln();
    for _ in 0..50 {
        if up != (delta > (0.5f64).ln()) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps * 0.5 };
        delta = one_step(eps);
    }
    eps.clamp(1e-6, 10.0)
}

struct ChainOutput {
    draws: Vec<GarchParams>,
    accept_rate: f64,
    divergences: usize,
    step_size: f64,
}

fn window_inverse_mass(window: &[Vec<f64>]) -> Vec<f64> {
    let n = window.len() as f64;
    let d = window[0].len();
    (0..d)
        .map(|k| {
            let m = window.iter().map(|z| z[k]).sum::<f64>() / n;
            let v = window.iter().map(|z| (z[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
        })
        .collect()
}

fn run_chain(target: &LogTarget, z_init: &[f64], config: &SamplerConfig, seed: u64) -> Result<ChainOutput> {
    let mut rng = stream_rng(seed, 0);
    let d = z_init.len();
    let mut z: Vec<f64> = z_init.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
    let (mut logp, mut grad) = target.log_density_and_gradient(&z);
    // Retry from the unjittered point if the jitter landed somewhere unusable.
    if !logp.is_finite() {
        z = z_init.to_vec();
        (logp, grad) = target.log_density_and_gradient(&z);
        if !logp.is_finite() {
            return Err(Error::Sampler("log target is not finite at the initial point".into()));
        }
    }
    let mut inv_mass = vec![1.0; d];
    let mut eps = initial_step_size(target, &z, logp, &grad, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, config.target_accept);

    let w = config.warmup;
    let w1 = (w as f64 * 0.15) as usize;
    let w2 = (w as f64 * 0.5) as usize;
    let w3 = (w as f64 * 0.8) as usize;
    let mut window: Vec<Vec<f64>> = Vec::new();
    let l = config.leapfrog_steps;
    let lo = ((0.8 * l as f64).ceil() as usize).max(1);
    let hi = ((1.2 * l as f64).floor() as usize).max(lo);

    for it in 0..w {
        let steps = rng.random_range(lo..=hi);
        let tr = hmc_step(target, &z, logp, &grad, &inv_mass, eps, steps, &mut rng);
        (z, logp, grad) = (tr.z, tr.logp, tr.grad);
        eps = da.update(tr.accept_stat);
        if it >= w1 && it < w3 {
            window.push(z.clone());
        }
        if (it + 1 == w2 || it + 1 == w3) && window.len() >= 10 {
            inv_mass = window_inverse_mass(&window);
            window.clear();
            eps = initial_step_size(target, &z, logp, &grad, &inv_mass, &mut rng);
            da = DualAveraging::new(eps, config.target_accept);
        }
    }
    if w > 0 {
        eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(config.samples);
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    for _ in 0..config.samples {
        let steps = rng.random_range(lo..=hi);
        let tr = hmc_step(target, &z, logp, &grad, &inv_mass, eps, steps, &mut rng);
        accepted += tr.accepted as usize;
        divergences += tr.divergent as usize;
        (z, logp, grad) = (tr.z, tr.logp, tr.grad);
        draws.push(target.to_params(&z)?);
    }
    Ok(ChainOutput { draws, accept_rate: accepted as f64 / config.samples as f64, divergences, step_size: eps })
}

/// Draws from the posterior proportional to exp(objective) * prior for a
/// GARCH(1,1) model. The objective is the Gaussian log-likelihood
/// (gamma = 0), the shifted DPD objective (gamma > 0), or the Student t
/// log-likelihood (gamma must be 0).
pub fn sample_posterior(
    series: &ReturnSeries,
    gamma: Gamma,
    prior: &PriorSpec,
    likelihood: Likelihood,
    config: &SamplerConfig,
) -> Result<(PosteriorDraws, Diagnostics)> {
    config.validate()?;
    let x = series.values();
    let target = LogTarget::new(x, gamma, *prior, likelihood)?;
    let reparam = Reparam::new(GarchOrder::garch11());
    let z_init = reparam.to_unconstrained(&moment_start(x, GarchOrder::garch11()))?.z;

    let run = |c: usize| run_chain(&target, &z_init, config, derive_seed(config.seed, 0xc4a1, c as u64));
    let outputs: Vec<Result<ChainOutput>> = if config.parallel_chains {
        (0..config.n_chains).into_par_iter().map(run).collect()
    } else {
        (0..config.n_chains).map(run).collect()
    };
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let total_div: usize = outputs.iter().map(|o| o.divergences).sum();
    let rate = total_div as f64 / (config.n_chains * config.samples) as f64;
    if rate > config.max_divergence_rate {
        return Err(Error::Sampler(format!(
            "{:.1}% of post-warmup transitions diverged; reduce the step size (raise target_accept) or lengthen warmup",
            100.0 * rate
        )));
    }

    let draws = PosteriorDraws {
        accept_rate: outputs.iter().map(|o| o.accept_rate).collect(),
        divergence_count: outputs.iter().map(|o| o.divergences).collect(),
        step_size: outputs.iter().map(|o| o.step_size).collect(),
        draws: outputs.into_iter().map(|o| o.draws).collect(),
    };
    let diagnostics = if draws.n_chains() >= 2 && config.samples >= 4 {
        diagnostics_from_matrix(&draws.as_matrix())?
    } else {
        let d = GarchOrder::garch11().dim();
        Diagnostics { rhat: vec![f64::NAN; d], ess: vec![f64::NAN; d] }
    };
    if diagnostics.max_rhat() > 1.1 {
        log::warn!("max R-hat {:.3} exceeds 1.1", diagnostics.max_rhat());
    }
    Ok((draws, diagnostics))
}
