//! The centred skew normal location-scale model and its parametrisations.
//!
//! A draw is `Y = μ + σ(X − δ√(2/π))` with `X = δX₊ + √(1−δ²)X₀`, so that
//! `E[Y] = μ`. The shape `α` is carried on the unbounded scale
//! `θ = arcsinh(α)/a` and the scale on `η = log σ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure_finite, Error, Result};
use crate::special::{log_norm_cdf, norm_log_pdf, SQRT_2_OVER_PI};

/// Clamp bound for Pearson skewness. Strictly inside the supremum
/// [`GAMMA1_SUP`], so [`gamma1_to_delta`] stays away from `|δ| = 1`.
pub const GAMMA1_BOUND: f64 = 0.995_224_91;

/// `lim_{δ→1} γ₁(δ)`, the largest skewness the family can produce.
pub const GAMMA1_SUP: f64 = 0.995_271_746_431_156;

/// Scaling constant of the hyperbolic shape transform `α = sinh(aθ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMap {
    a: f64,
}

impl ShapeMap {
    pub fn new(a: f64) -> Result<Self> {
        if a.is_finite() && a > 0.0 {
            Ok(Self { a })
        } else {
            Err(Error::InvalidInput(format!("shape scaling a must be > 0, got {a}")))
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn alpha(&self, theta: f64) -> f64 {
        (self.a * theta).sinh()
    }

    pub fn delta(&self, theta: f64) -> f64 {
        (self.a * theta).tanh()
    }

    /// `dα/dθ = a·cosh(aθ)`.
    pub fn dalpha(&self, theta: f64) -> f64 {
        self.a * (self.a * theta).cosh()
    }

    pub fn theta(&self, alpha: f64) -> f64 {
        alpha.asinh() / self.a
    }
}

impl Default for ShapeMap {
    fn default() -> Self {
        Self { a: 1.0 }
    }
}

/// Map `θ` to `(α, δ)`.
pub fn theta_to_shape(theta: f64, map: ShapeMap) -> Result<(f64, f64)> {
    ensure_finite("theta", theta)?;
    Ok((map.alpha(theta), map.delta(theta)))
}

/// Inverse of [`theta_to_shape`]: `θ = arcsinh(α)/a`.
pub fn shape_to_theta(alpha: f64, map: ShapeMap) -> Result<f64> {
    ensure_finite("alpha", alpha)?;
    Ok(map.theta(alpha))
}

/// Pearson skewness of the model as a function of `δ`.
pub fn delta_to_gamma1(delta: f64) -> Result<f64> {
    if !(delta.abs() < 1.0) {
        return Err(Error::Domain(format!("|delta| must be < 1, got {delta}")));
    }
    let m = delta * SQRT_2_OVER_PI;
    let v = 1.0 - m * m;
    Ok(0.5 * (4.0 - PI) * m * m * m / (v * v.sqrt()))
}

/// Inverse of [`delta_to_gamma1`] on `|γ₁| < GAMMA1_BOUND`.
pub fn gamma1_to_delta(gamma1: f64) -> Result<f64> {
    if !(gamma1.abs() < GAMMA1_BOUND) {
        return Err(Error::Domain(format!(
            "|gamma1| must be < {GAMMA1_BOUND}, got {gamma1}"
        )));
    }
    let r = (2.0 * gamma1 / (4.0 - PI)).cbrt();
    Ok((PI / 2.0).sqrt() * r / (1.0 + r * r).sqrt())
}

/// A point `(μ, η, θ)` of the model together with the shape map it lives under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub mu: f64,
    pub eta: f64,
    pub theta: f64,
    #[serde(default)]
    pub map: ShapeMap,
}

impl Params {
    pub fn new(mu: f64, eta: f64, theta: f64) -> Self {
        Self {
            mu,
            eta,
            theta,
            map: ShapeMap::default(),
        }
    }

    /// Build from the natural `(μ, σ, α)` coordinates.
    pub fn from_natural(mu: f64, sigma: f64, alpha: f64, map: ShapeMap) -> Result<Self> {
        ensure_finite("mu", mu)?;
        ensure_finite("alpha", alpha)?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            mu,
            eta: sigma.ln(),
            theta: map.theta(alpha),
            map,
        })
    }

    pub fn with_map(mut self, map: ShapeMap) -> Self {
        self.map = map;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.eta.exp()
    }

    pub fn alpha(&self) -> f64 {
        self.map.alpha(self.theta)
    }

    pub fn delta(&self) -> f64 {
        self.map.delta(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.eta.is_finite() && self.theta.is_finite()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        ensure_finite("mu", self.mu)?;
        ensure_finite("eta", self.eta)?;
        ensure_finite("theta", self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMoments {
    pub mean: f64,
    pub variance: f64,
    pub gamma1: f64,
}

/// Log density of the centred location-scale skew normal at `y`.
pub fn sn_logpdf(y: f64, params: &Params) -> f64 {
    let z = (y - params.mu) / params.sigma();
    let b = z + params.delta() * SQRT_2_OVER_PI;
    std::f64::consts::LN_2 - params.eta + norm_log_pdf(b) + log_norm_cdf(params.alpha() * b)
}

pub fn model_moments(params: &Params) -> ModelMoments {
    let delta = params.delta();
    let sigma = params.sigma();
    let m = delta * SQRT_2_OVER_PI;
    // |δ| < 1 is guaranteed by tanh except at θ = ±∞, where the limit applies.
    let gamma1 = delta_to_gamma1(delta).unwrap_or(GAMMA1_SUP.copysign(delta));
    ModelMoments {
        mean: params.mu,
        variance: sigma * sigma * (1.0 - m * m),
        gamma1,
    }
}

/// Draw `n` i.i.d. values from the model, deterministically for a given seed.
pub fn sample(n: usize, params: &Params, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with(&mut rng, n, params))
}

pub(crate) fn sample_with<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, params: &Params) -> Vec<f64> {
    let delta = params.delta();
    let sigma = params.sigma();
    let ortho = (1.0 - delta * delta).sqrt();
    let shift = delta * SQRT_2_OVER_PI;
    (0..n)
        .map(|_| {
            let half: f64 = StandardNormal.sample(rng);
            let base: f64 = StandardNormal.sample(rng);
            let x = delta * half.abs() + ortho * base;
            params.mu + sigma * (x - shift)
        })
        .collect()
}
