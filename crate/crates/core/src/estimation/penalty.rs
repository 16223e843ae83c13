use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Default log-Cauchy constant of the fixed-penalty baseline.
pub const DEFAULT_C2: f64 = 0.856_250;

/// Penalty on the shape coordinate `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PenaltySpec {
    /// `sinh²θ`, i.e. `α²` under the unit shape map.
    #[default]
    Hyperbolic,
    /// `θ²`.
    Ridge,
    /// `log(1 + c₂ sinh²θ)`.
    LogCauchy { c2: f64 },
}

/// Penalty value with its first two derivatives in `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl PenaltySpec {
    pub fn log_cauchy(c2: f64) -> Result<Self, Error> {
        if c2.is_finite() && c2 > 0.0 {
            Ok(Self::LogCauchy { c2 })
        } else {
            Err(Error::InvalidInput(format!("c2 must be > 0, got {c2}")))
        }
    }

    pub fn eval(&self, theta: f64) -> PenaltyValue {
        match *self {
            Self::Hyperbolic => {
                let s = theta.sinh();
                PenaltyValue {
                    value: s * s,
                    d1: (2.0 * theta).sinh(),
                    d2: 2.0 * (2.0 * theta).cosh(),
                }
            }
            Self::Ridge => PenaltyValue {
                value: theta * theta,
                d1: 2.0 * theta,
                d2: 2.0,
            },
            Self::LogCauchy { c2 } => {
                let s = theta.sinh();
                let u = c2 * s * s;
                let du = c2 * (2.0 * theta).sinh();
                let ddu = 2.0 * c2 * (2.0 * theta).cosh();
                let q = 1.0 + u;
                PenaltyValue {
                    value: u.ln_1p(),
                    d1: du / q,
                    d2: ddu / q - (du / q).powi(2),
                }
            }
        }
    }

    pub fn value(&self, theta: f64) -> f64 {
        self.eval(theta).value
    }
}

impl fmt::Display for PenaltySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hyperbolic => f.write_str("hyperbolic"),
            Self::Ridge => f.write_str("ridge"),
            Self::LogCauchy { c2 } => write!(f, "log-cauchy(c2={c2})"),
        }
    }
}

impl FromStr for PenaltySpec {
    type Err = Error;

    /// Accepts `hyperbolic`, `ridge`, `log-cauchy` (default `c₂`) or `log-cauchy:<c2>`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "hyperbolic" => Ok(Self::Hyperbolic),
            "ridge" => Ok(Self::Ridge),
            "log-cauchy" | "logcauchy" | "log_cauchy" => Ok(Self::LogCauchy { c2: DEFAULT_C2 }),
            other => match other.split_once(':') {
                Some(("log-cauchy" | "logcauchy" | "log_cauchy", c2)) => {
                    let c2 = c2
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidInput(format!("bad c2 {c2:?}: {e}")))?;
                    Self::log_cauchy(c2)
                }
                _ => Err(Error::InvalidInput(format!("unknown penalty {s:?}"))),
            },
        }
    }
}

/// Numerical check of the admissibility conditions at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C1Report {
    pub value_at_zero: f64,
    pub d1_at_zero: f64,
    /// Reported, not asserted: the log-Cauchy penalty has `2c₂` here.
    pub d2_at_zero: f64,
    /// `pen(20) > pen(10) > pen(1)`.
    pub grows: bool,
    pub nonnegative_and_flat: bool,
}

pub fn check_c1(spec: &PenaltySpec) -> C1Report {
    let at0 = spec.eval(0.0);
    let (p1, p10, p20) = (spec.value(1.0), spec.value(10.0), spec.value(20.0));
    C1Report {
        value_at_zero: at0.value,
        d1_at_zero: at0.d1,
        d2_at_zero: at0.d2,
        grows: p20 > p10 && p10 > p1,
        nonnegative_and_flat: at0.value.abs() < 1e-10 && at0.d1.abs() < 1e-10,
    }
}

/// `pen(θ)` together with its derivatives; convenience wrapper over [`PenaltySpec::eval`].
pub fn penalty_eval(spec: &PenaltySpec, theta: f64) -> PenaltyValue {
    spec.eval(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [PenaltySpec; 3] = [
        PenaltySpec::Hyperbolic,
        PenaltySpec::Ridge,
        PenaltySpec::LogCauchy { c2: DEFAULT_C2 },
    ];

    #[test]
    fn values_at_origin() {
        for spec in ALL {
            let v = spec.eval(0.0);
            assert_eq!((v.value, v.d1), (0.0, 0.0));
        }
        assert_eq!(PenaltySpec::Hyperbolic.eval(0.0).d2, 2.0);
        assert_eq!(PenaltySpec::Ridge.eval(0.0).d2, 2.0);
    }

    #[test]
    fn hyperbolic_at_one() {
        assert!((PenaltySpec::Hyperbolic.value(1.0) - 1.381_097_845_541_815_7).abs() < 1e-14);
        let e = 1f64.exp();
        assert!((PenaltySpec::Hyperbolic.value(1.0) - (e - 1.0 / e).powi(2) / 4.0).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in ALL {
            for &t in &[-2.0, -0.5, 0.3, 1.7] {
                let v = spec.eval(t);
                let fd1 = (spec.value(t + h) - spec.value(t - h)) / (2.0 * h);
                let fd2 = (spec.eval(t + h).d1 - spec.eval(t - h).d1) / (2.0 * h);
                assert!((v.d1 - fd1).abs() < 1e-7 * (1.0 + v.d1.abs()), "{spec} d1 at {t}");
                assert!((v.d2 - fd2).abs() < 1e-7 * (1.0 + v.d2.abs()), "{spec} d2 at {t}");
            }
        }
    }

    #[test]
    fn c1_reports() {
        let r = check_c1(&PenaltySpec::Hyperbolic);
        assert!((r.d2_at_zero - 2.0).abs() < 1e-6 && r.grows && r.nonnegative_and_flat);
        assert_eq!(check_c1(&PenaltySpec::Ridge).d2_at_zero, 2.0);
        let r = check_c1(&PenaltySpec::LogCauchy { c2: DEFAULT_C2 });
        assert!((r.d2_at_zero - 1.7125).abs() < 1e-12);
        assert!(r.grows && r.nonnegative_and_flat);
    }

    #[test]
    fn parse_round_trip() {
        assert_eq!("ridge".parse::<PenaltySpec>().unwrap(), PenaltySpec::Ridge);
        assert_eq!(
            "log-cauchy:0.5".parse::<PenaltySpec>().unwrap(),
            PenaltySpec::LogCauchy { c2: 0.5 }
        );
        assert!("log-cauchy:-1".parse::<PenaltySpec>().is_err());
        assert!("lasso".parse::<PenaltySpec>().is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_even_and_growing(t in 0.0f64..8.0, dt in 0.001f64..2.0) {
            for spec in ALL {
                let v = spec.value(t);
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v, spec.value(-t));
                prop_assert!(spec.value(t + dt) > v);
            }
        }
    }
}
