use crate::dist::{gamma1_to_delta, Params, ShapeMap, GAMMA1_BOUND};
use crate::error::{Error, Result};
use crate::special::SQRT_2_OVER_PI;

/// Sample skewness is clamped to `±SKEWNESS_CLAMP` before inversion.
pub const SKEWNESS_CLAMP: f64 = GAMMA1_BOUND * (1.0 - 1e-6);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialEstimate {
    pub params: Params,
    /// Biased (1/n) sample skewness before clamping.
    pub gamma1_raw: f64,
    pub clamped: bool,
}

/// Method-of-moments starting values from the first three sample moments.
pub fn mom_init(y: &[f64], map: ShapeMap) -> Result<InitialEstimate> {
    if y.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: y.len(),
        });
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite observation {bad}")));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let (m2, m3) = y.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let d = v - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if !(m2 > 0.0) || m2.sqrt() <= 1e-14 * mean.abs() {
        return Err(Error::DegenerateSample("sample variance is zero".into()));
    }
    let gamma1_raw = m3 / (m2 * m2.sqrt());
    if !gamma1_raw.is_finite() {
        return Err(Error::NumericalFailure {
            message: format!("sample moments overflow (m2 = {m2}, m3 = {m3})"),
            trace: Vec::new(),
        });
    }
    let clamped = gamma1_raw.abs() > SKEWNESS_CLAMP;
    let gamma1 = gamma1_raw.clamp(-SKEWNESS_CLAMP, SKEWNESS_CLAMP);
    let delta = gamma1_to_delta(gamma1)?;
    let alpha = delta / (1.0 - delta * delta).sqrt();
    let shift = delta * SQRT_2_OVER_PI;
    let sigma = (m2 / (1.0 - shift * shift)).sqrt();
    Ok(InitialEstimate {
        params: Params {
            mu: mean,
            eta: sigma.ln(),
            theta: map.theta(alpha),
            map,
        },
        gamma1_raw,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{model_moments, sample};

    #[test]
    fn overflowing_moments_are_numerical_failures() {
        let r = mom_init(&[1e300, -1e300, 1.0, 2.0], ShapeMap::default());
        assert!(matches!(r, Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn symmetric_sample_gives_zero_shape() {
        let y: Vec<f64> = [-1.0, 0.0, 1.0].iter().cycle().take(30).copied().collect();
        let init = mom_init(&y, ShapeMap::default()).unwrap();
        assert_eq!(init.params.theta, 0.0);
        assert_eq!(init.params.mu, 0.0);
        assert!(!init.clamped);
    }

    #[test]
    fn too_few_or_constant() {
        assert!(matches!(
            mom_init(&[1.0, 2.0, 3.0], ShapeMap::default()),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
        assert!(matches!(
            mom_init(&[2.0; 10], ShapeMap::default()),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn wild_skewness_is_clamped() {
        // one huge outlier in a sample of zeros has skewness ≈ √n
        let mut y = vec![0.0; 50];
        y[0] = 100.0;
        let init = mom_init(&y, ShapeMap::default()).unwrap();
        assert!(init.gamma1_raw > GAMMA1_BOUND);
        assert!(init.clamped);
        assert!(init.params.theta.is_finite() && init.params.theta > 0.0);
        let g = model_moments(&init.params).gamma1;
        assert!(g.abs() < GAMMA1_BOUND);
    }

    #[test]
    fn large_sample_recovers_truth() {
        let truth = Params::from_natural(0.0, 1.0, 3.0, ShapeMap::default()).unwrap();
        let n = 100_000;
        let estimates: Vec<[f64; 3]> = (0..30u64)
            .map(|seed| {
                let p = mom_init(&sample(n, &truth, 1000 + seed).unwrap(), ShapeMap::default())
                    .unwrap()
                    .params;
                [p.mu, p.sigma(), p.alpha()]
            })
            .collect();
        let target = [0.0, 1.0, 3.0];
        for k in 0..3 {
            let xs: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            // a single run against the replicate spread
            assert!((xs[0] - target[k]).abs() < 3.0 * sd, "component {k}: {} sd {sd}", xs[0]);
            assert!((m - target[k]).abs() < 3.0 * sd, "component {k}: mean {m} sd {sd}");
        }
    }

    #[test]
    fn shift_and_scale_equivariance() {
        let y = sample(500, &Params::new(0.3, 0.1, 0.8), 4).unwrap();
        let base = mom_init(&y, ShapeMap::default()).unwrap().params;
        let shifted: Vec<f64> = y.iter().map(|v| v + 7.5).collect();
        let s = mom_init(&shifted, ShapeMap::default()).unwrap().params;
        assert!((s.mu - base.mu - 7.5).abs() < 1e-10);
        assert!((s.sigma() - base.sigma()).abs() < 1e-10);
        assert!((s.theta - base.theta).abs() < 1e-10);
        let scaled: Vec<f64> = y.iter().map(|v| v * 3.0).collect();
        let s = mom_init(&scaled, ShapeMap::default()).unwrap().params;
        assert!((s.sigma() - 3.0 * base.sigma()).abs() < 1e-10);
        assert!((s.theta - base.theta).abs() < 1e-10);
    }
}
