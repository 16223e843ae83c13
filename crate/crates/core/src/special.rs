//! Standard normal helpers that stay finite deep in the lower tail.
//!
//! Every score and E-step quantity in this crate divides by `Φ(x)` at
//! arguments that can reach `-10⁴` for extreme shape values, so the ratio
//! `φ(x)/Φ(x)` and `log Φ(x)` are never formed from an underflowed `Φ`.

use statrs::function::erf::erfc;
use std::f64::consts::SQRT_2;

/// `√(2/π)`, the mean of the standard half-normal.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// `½·ln(2π)`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument `Φ` is replaced by its asymptotic tail expansion.
const TAIL_CUTOFF: f64 = -30.0;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Asymptotic series of `u·Φ(-u)/φ(u)` for large `u`.
fn tail_series(u: f64) -> f64 {
    let r = 1.0 / (u * u);
    // 1 - r + 3r² - 15r³ + 105r⁴ - 945r⁵ + 10395r⁶ - 135135r⁷
    let coeffs = [1.0, -1.0, 3.0, -15.0, 105.0, -945.0, 10395.0, -135135.0];
    coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
}

/// `log Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        let u = -x;
        norm_log_pdf(x) - u.ln() + tail_series(u).ln()
    } else if x > 5.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

/// The ratio `φ(x)/Φ(x)` (inverse Mills ratio of the lower tail).
///
/// Positive and decreasing in `x`; behaves like `-x` as `x → -∞` and like
/// `φ(x)` as `x → ∞`. Equals `√(2/π)` at zero.
pub fn mills_ratio(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        let u = -x;
        u / tail_series(u)
    } else if x == 0.0 {
        SQRT_2_OVER_PI
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}
