//! Likelihood, scores, penalties and method-of-moments starting values.

mod init;
mod penalty;

pub use crate::special::mills_ratio;
pub use init::{mom_init, InitialEstimate, SKEWNESS_CLAMP};
pub use penalty::{check_c1, penalty_eval, C1Report, PenaltySpec, PenaltyValue, DEFAULT_C2};

use crate::dist::Params;
use crate::error::{Error, Result};
use crate::special::{log_norm_cdf, SQRT_2_OVER_PI};
use std::f64::consts::PI;

/// Hard bound on `|θ|` used by every optimiser (`α ≈ 1.1·10⁴` at the default).
pub const THETA_BOUND: f64 = 10.0;

/// Per-observation averaged score of the incomplete-data log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradVector {
    pub d_mu: f64,
    pub d_eta: f64,
    pub d_theta: f64,
}

fn nonempty(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        Err(Error::InvalidInput("empty sample".into()))
    } else {
        Ok(())
    }
}

/// Incomplete-data log-likelihood `l_inc(μ, η, θ | y)`.
pub fn loglik(params: &Params, y: &[f64]) -> Result<f64> {
    nonempty(y)?;
    Ok(loglik_unchecked(params, y))
}

pub(crate) fn loglik_unchecked(params: &Params, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let sigma = params.sigma();
    let alpha = params.alpha();
    let shift = params.delta() * SQRT_2_OVER_PI;
    let (sq, logcdf) = y.iter().fold((0.0, 0.0), |(sq, lc), &yi| {
        let b = (yi - params.mu) / sigma + shift;
        (sq + b * b, lc + log_norm_cdf(alpha * b))
    });
    0.5 * n * (2.0 / (PI * sigma * sigma)).ln() - 0.5 * sq + logcdf
}

/// Analytic scores of `l_inc`, each divided by `n`.
pub fn grad_loglik(params: &Params, y: &[f64]) -> Result<GradVector> {
    nonempty(y)?;
    let n = y.len() as f64;
    let sigma = params.sigma();
    let alpha = params.alpha();
    let delta = params.delta();
    let map = params.map;
    let dalpha = map.dalpha(params.theta);
    // dδ/dθ = a(1 − δ²)
    let ddelta_shift = map.a() * (1.0 - delta * delta) * SQRT_2_OVER_PI;
    let shift = delta * SQRT_2_OVER_PI;

    let (mut s_mu, mut s_eta, mut s_theta) = (0.0, 0.0, 0.0);
    for &yi in y {
        let z = (yi - params.mu) / sigma;
        let b = z + shift;
        let r = mills_ratio(alpha * b);
        s_mu += b - r * alpha;
        s_eta += b * z - alpha * r * z;
        s_theta += -b * ddelta_shift + r * (dalpha * b + alpha * ddelta_shift);
    }
    Ok(GradVector {
        d_mu: s_mu / (n * sigma),
        d_eta: -1.0 + s_eta / n,
        d_theta: s_theta / n,
    })
}

/// `l_inc − λ·pen(θ)`.
pub fn penalized_loglik(params: &Params, y: &[f64], lambda: f64, spec: &PenaltySpec) -> Result<f64> {
    check_lambda(lambda)?;
    let l = loglik(params, y)?;
    Ok(if lambda == 0.0 {
        l
    } else {
        l - lambda * spec.value(params.theta)
    })
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )))
    }
}

/// Expected information of `l_inc` at a symmetric point `(μ, η, 0)`.
///
/// The shape row and column vanish: the model is singular at `θ = 0`.
pub fn fisher_info_symmetry(n: usize, sigma: f64) -> Result<[[f64; 3]; 3]> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
    }
    let n = n as f64;
    Ok([[n / (sigma * sigma), 0.0, 0.0], [0.0, 2.0 * n, 0.0], [0.0, 0.0, 0.0]])
}
