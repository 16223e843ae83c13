use super::*;
use crate::dist::sample;
use crate::estimation::{grad_loglik, penalized_loglik};
use statrs::function::erf::erfc;

fn sample_at(n: usize, alpha: f64, seed: u64) -> Vec<f64> {
    sample(
        n,
        &Params::from_natural(0.0, 1.0, alpha, ShapeMap::default()).unwrap(),
        seed,
    )
    .unwrap()
}

fn tight() -> PemOptions {
    PemOptions {
        tol: 1e-14,
        max_iter: 20_000,
        ..PemOptions::default()
    }
}

/// Log-likelihood written directly in the (ξ, ω, α) parametrisation.
fn direct_loglik(xi: f64, omega: f64, alpha: f64, y: &[f64]) -> f64 {
    y.iter()
        .map(|&v| {
            let z = (v - xi) / omega;
            let log_phi = -0.5 * z * z - 0.5 * (2.0 * PI).ln();
            let cdf = 0.5 * erfc(-alpha * z / 2f64.sqrt());
            2f64.ln() + log_phi - omega.ln() + cdf.ln()
        })
        .sum()
}

/// Plain Nelder–Mead maximiser, restarted until the simplex stops improving.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(f: F, start: [f64; 3], scale: f64) -> [f64; 3] {
    let mut best = start;
    let mut best_val = f(&best);
    for _restart in 0..30 {
        let mut simplex = vec![best];
        for k in 0..3 {
            let mut p = best;
            p[k] += scale * (1.0 + p[k].abs()) * 0.1;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| -f(p)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..4).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = idx.iter().map(|&i| simplex[i]).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let spread = (vals[3] - vals[0]).abs();
            if spread < 1e-15 * (1.0 + vals[0].abs()) {
                break;
            }
            let centroid: [f64; 3] = std::array::from_fn(|k| (0..3).map(|i| simplex[i][k]).sum::<f64>() / 3.0);
            let along =
                |t: f64| -> [f64; 3] { std::array::from_fn(|k| centroid[k] + t * (simplex[3][k] - centroid[k])) };
            let r = along(-1.0);
            let fr = -f(&r);
            if fr < vals[0] {
                let e = along(-2.0);
                let fe = -f(&e);
                if fe < fr {
                    simplex[3] = e;
                    vals[3] = fe;
                } else {
                    simplex[3] = r;
                    vals[3] = fr;
                }
            } else if fr < vals[2] {
                simplex[3] = r;
                vals[3] = fr;
            } else {
                let c = if fr < vals[3] { along(-0.5) } else { along(0.5) };
                let fc = -f(&c);
                if fc < vals[3].min(fr) {
                    simplex[3] = c;
                    vals[3] = fc;
                } else {
                    for i in 1..4 {
                        simplex[i] = std::array::from_fn(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]));
                        vals[i] = -f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..4).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let improved = -vals[i] > best_val + 1e-13 * best_val.abs();
        if -vals[i] >= best_val {
            best = simplex[i];
            best_val = -vals[i];
        }
        if !improved {
            break;
        }
    }
    best
}

#[test]
fn latent_moments_match_quadrature() {
    for t in [-8.0f64, -3.0, -0.5, 0.0, 0.7, 2.5, 6.0] {
        // Simpson on (0, max(t,0)+12) of w^k φ(w − t)
        let hi = t.max(0.0) + 12.0;
        let m = 20_000;
        let h = hi / m as f64;
        let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
        for i in 0..=m {
            let w = i as f64 * h;
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let d = c * (-0.5 * (w - t) * (w - t)).exp();
            z0 += d;
            z1 += d * w;
            z2 += d * w * w;
        }
        let (e1, e2) = latent_moments(t);
        assert!((e1 - z1 / z0).abs() < 1e-8 * (1.0 + e1), "t={t}: {e1} vs {}", z1 / z0);
        assert!((e2 - z2 / z0).abs() < 1e-8 * (1.0 + e2), "t={t}: {e2} vs {}", z2 / z0);
    }
    // deep tail: mean of the truncated normal tends to 1/|t|
    let (e1, _) = latent_moments(-50.0);
    assert!((e1 * 50.0 - 1.0).abs() < 1e-3);
}

#[test]
fn e_objective_minorises_the_likelihood() {
    let y = sample_at(60, 2.0, 11);
    let prev = Params::new(0.1, -0.2, 0.9);
    let spec = PenaltySpec::Hyperbolic;
    let lambda = 2.0;
    let gap0 =
        penalized_loglik(&prev, &y, lambda, &spec).unwrap() - e_objective(&prev, &prev, &y, lambda, &spec).unwrap();
    for &(dm, de, dt) in &[
        (0.3, 0.0, 0.0),
        (0.0, 0.4, 0.0),
        (0.0, 0.0, -1.2),
        (-0.5, 0.2, 0.7),
        (1.0, -0.5, 2.0),
    ] {
        let q = Params::new(prev.mu + dm, prev.eta + de, prev.theta + dt);
        let gap = penalized_loglik(&q, &y, lambda, &spec).unwrap() - e_objective(&q, &prev, &y, lambda, &spec).unwrap();
        assert!(gap >= gap0 - 1e-9, "gap {gap} < {gap0}");
    }
}

#[test]
fn e_objective_gradient_equals_score_at_the_current_iterate() {
    let y = sample_at(40, -1.5, 12);
    let prev = Params::new(-0.2, 0.15, -0.6);
    let g = grad_loglik(&prev, &y).unwrap();
    let q = |mu: f64, eta: f64, th: f64| {
        e_objective(&Params::new(mu, eta, th), &prev, &y, 0.0, &PenaltySpec::Hyperbolic).unwrap()
    };
    let h = 1e-5;
    let fd = [
        (q(prev.mu + h, prev.eta, prev.theta) - q(prev.mu - h, prev.eta, prev.theta)) / (2.0 * h),
        (q(prev.mu, prev.eta + h, prev.theta) - q(prev.mu, prev.eta - h, prev.theta)) / (2.0 * h),
        (q(prev.mu, prev.eta, prev.theta + h) - q(prev.mu, prev.eta, prev.theta - h)) / (2.0 * h),
    ];
    // grad_loglik reports the per-observation score
    let n = y.len() as f64;
    for (a, b) in fd.iter().zip([g.d_mu * n, g.d_eta * n, g.d_theta * n]) {
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn closed_form_updates_are_stationary() {
    let y = sample_at(80, 3.0, 13);
    let prev = Params::new(0.05, 0.1, 0.8);
    let spec = PenaltySpec::Hyperbolic;
    let q = |p: Params| e_objective(&p, &prev, &y, 0.0, &spec).unwrap();
    let h = 1e-6;

    let mu = m_step_mu(&prev, &y).unwrap();
    let at = |m: f64| q(Params::new(m, prev.eta, prev.theta));
    let d = (at(mu + h) - at(mu - h)) / (2.0 * h);
    assert!(d.abs() < 1e-5, "dΨ/dμ = {d}");
    assert!(at(mu) >= at(mu + 0.01) && at(mu) >= at(mu - 0.01));

    let sigma = m_step_sigma(mu, &prev, &y).unwrap();
    let at = |e: f64| q(Params::new(mu, e, prev.theta));
    let eta = sigma.ln();
    let d = (at(eta + h) - at(eta - h)) / (2.0 * h);
    assert!(d.abs() < 1e-5, "dΨ/dη = {d}");
    assert!(at(eta) >= at(eta + 0.01) && at(eta) >= at(eta - 0.01));
}

#[test]
fn theta_update_beats_a_grid() {
    let y = sample_at(100, 2.0, 14);
    let prev = Params::new(0.0, 0.0, 0.5);
    let opts = PemOptions::default();
    for (lambda, spec) in [
        (0.0, PenaltySpec::Hyperbolic),
        (5.0, PenaltySpec::Hyperbolic),
        (3.0, PenaltySpec::Ridge),
        (Q_LAMBDA, PenaltySpec::LogCauchy { c2: Q_C2 }),
    ] {
        let mu = m_step_mu(&prev, &y).unwrap();
        let eta = m_step_sigma(mu, &prev, &y).unwrap().ln();
        let th = m_step_theta(mu, eta, &prev, &y, lambda, &spec, &opts).unwrap();
        let q = |t: f64| e_objective(&Params::new(mu, eta, t), &prev, &y, lambda, &spec).unwrap();
        let best = (-4000..=4000)
            .map(|i| i as f64 * 0.0025)
            .map(q)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            q(th) >= best - 1e-9,
            "λ={lambda} {spec}: θ={th} Ψ={} grid {best}",
            q(th)
        );
    }
}

#[test]
fn trace_is_monotone() {
    let opts = PemOptions::default();
    for seed in 0..20u64 {
        let y = sample_at(
            50 + 10 * seed as usize,
            [0.0, 1.0, 4.0, -3.0][seed as usize % 4],
            100 + seed,
        );
        for (lambda, spec) in [
            (0.0, PenaltySpec::Hyperbolic),
            (1.0, PenaltySpec::Ridge),
            (20.0, PenaltySpec::LogCauchy { c2: Q_C2 }),
        ] {
            let fit = pem_fit(&y, lambda, &spec, None, &opts).unwrap();
            for w in fit.trace.windows(2) {
                let (a, b) = (w[0].penalized_loglik, w[1].penalized_loglik);
                assert!(b >= a - 1e-12 * a.abs(), "seed {seed} λ={lambda}: {a} -> {b}");
            }
            assert_eq!(fit.trace.last().unwrap().penalized_loglik, fit.penalized_loglik);
        }
    }
}

#[test]
fn plain_em_also_ascends() {
    let y = sample_at(120, 3.0, 5);
    let opts = PemOptions {
        accelerate: false,
        max_iter: 2000,
        ..PemOptions::default()
    };
    let fit = pem_fit(&y, 0.5, &PenaltySpec::Hyperbolic, None, &opts).unwrap();
    for w in fit.trace.windows(2) {
        assert!(w[1].penalized_loglik >= w[0].penalized_loglik - 1e-12 * w[0].penalized_loglik.abs());
    }
    let fast = pem_fit(&y, 0.5, &PenaltySpec::Hyperbolic, None, &PemOptions::default()).unwrap();
    assert!(fast.penalized_loglik >= fit.penalized_loglik - 1e-6 * fit.penalized_loglik.abs());
}

#[test]
fn mle_matches_derivative_free_oracle() {
    for seed in 0..3u64 {
        let y = sample_at(200, 2.0, 300 + seed);
        let fit = mle_fit(&y, &tight()).unwrap();
        assert!(!fit.hit_bound);
        let p = fit.params;
        let delta = p.delta();
        let omega = p.sigma();
        let xi = p.mu - omega * delta * SQRT_2_OVER_PI;
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        let start = [mean - sd, (1.2 * sd).ln(), 1.0];
        let x = nelder_mead(|x| direct_loglik(x[0], x[1].exp(), x[2], &y), start, 1.0);
        let (xi_o, omega_o, alpha_o) = (x[0], x[1].exp(), x[2]);
        let l_oracle = direct_loglik(xi_o, omega_o, alpha_o, &y);
        assert!(
            fit.loglik >= l_oracle - 1e-9,
            "seed {seed}: EM {} < oracle {l_oracle}",
            fit.loglik
        );
        assert!((fit.loglik - direct_loglik(xi, omega, p.alpha(), &y)).abs() < 1e-8);
        assert!((xi - xi_o).abs() < 1e-4, "seed {seed}: ξ {xi} vs {xi_o}");
        assert!((omega - omega_o).abs() < 1e-4, "seed {seed}: ω {omega} vs {omega_o}");
        assert!(
            (p.alpha() - alpha_o).abs() < 1e-4,
            "seed {seed}: α {} vs {alpha_o}",
            p.alpha()
        );
    }
}

#[test]
fn converged_fit_is_a_penalised_stationary_point() {
    let y = sample_at(300, 2.0, 21);
    let lambda = 3.0;
    let spec = PenaltySpec::Hyperbolic;
    let fit = pem_fit(&y, lambda, &spec, None, &tight()).unwrap();
    assert!(fit.converged);
    let g = grad_loglik(&fit.params, &y).unwrap();
    let d1 = spec.eval(fit.params.theta).d1;
    let n = y.len() as f64;
    assert!(g.d_mu.abs() < 1e-6, "{g:?}");
    assert!(g.d_eta.abs() < 1e-6, "{g:?}");
    assert!(
        (n * g.d_theta - lambda * d1).abs() < 1e-6 * n,
        "{g:?} vs {}",
        lambda * d1 / n
    );
}

#[test]
fn large_penalty_on_symmetric_sample_gives_exact_zero() {
    let truth = Params::new(0.0, 0.0, 0.0);
    let mut checked = 0;
    for seed in 0..40u64 {
        let y = sample(100, &truth, 400 + seed).unwrap();
        let threshold = crate::cv::symmetry_threshold(&y, &truth);
        let lambda = 1.01 * threshold;
        let fit = pem_fit(&y, lambda, &PenaltySpec::Hyperbolic, None, &PemOptions::default()).unwrap();
        if fit.params.theta != 0.0 {
            // only a strictly better asymmetric optimum may beat the normal fit
            let mean = y.iter().sum::<f64>() / 100.0;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            let sym = Params::new(mean, 0.5 * var.ln(), 0.0);
            let lp_sym = penalized_loglik(&sym, &y, lambda, &PenaltySpec::Hyperbolic).unwrap();
            assert!(fit.penalized_loglik > lp_sym, "seed {seed}");
        }
        if threshold >= 1.0 {
            checked += 1;
            assert_eq!(fit.params.theta, 0.0, "seed {seed}, threshold {threshold}");
        }
        let heavy = pem_fit(&y, 1e4, &PenaltySpec::Hyperbolic, None, &PemOptions::default()).unwrap();
        assert_eq!(heavy.params.theta, 0.0);
        let mean = y.iter().sum::<f64>() / 100.0;
        assert!((heavy.params.mu - mean).abs() < 1e-12);
    }
    assert!(checked >= 10);
}

#[test]
fn consistent_at_large_n() {
    let y = sample_at(10_000, 3.0, 31);
    let fit = mle_fit(&y, &PemOptions::default()).unwrap();
    let p = fit.params;
    assert!(p.mu.abs() < 0.05 && (p.sigma() - 1.0).abs() < 0.05, "{p:?}");
    assert!((p.alpha() - 3.0).abs() < 0.5, "α̂ = {}", p.alpha());
}

#[test]
fn location_scale_and_reflection_equivariance() {
    let y = sample_at(150, 2.5, 41);
    let opts = tight();
    let base = pem_fit(&y, 1.0, &PenaltySpec::Hyperbolic, None, &opts).unwrap().params;
    let moved: Vec<f64> = y.iter().map(|v| 3.0 + 2.0 * v).collect();
    let m = pem_fit(&moved, 1.0, &PenaltySpec::Hyperbolic, None, &opts)
        .unwrap()
        .params;
    assert!((m.mu - (3.0 + 2.0 * base.mu)).abs() < 1e-6);
    assert!((m.sigma() - 2.0 * base.sigma()).abs() < 1e-6);
    assert!((m.theta - base.theta).abs() < 1e-5);
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    let r = pem_fit(&neg, 1.0, &PenaltySpec::Hyperbolic, None, &opts)
        .unwrap()
        .params;
    assert!((r.mu + base.mu).abs() < 1e-6);
    assert!((r.theta + base.theta).abs() < 1e-5);
}

#[test]
fn symmetric_two_point_sample() {
    let y: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
    let fit = pem_fit(&y, 1.0, &PenaltySpec::Hyperbolic, None, &PemOptions::default()).unwrap();
    assert_eq!(fit.params.theta, 0.0);
    assert!(fit.params.mu.abs() < 1e-14);
    assert!(fit.params.eta.abs() < 1e-12);
}

#[test]
fn mle_diverges_sometimes_penalised_fits_never() {
    let opts = PemOptions::default();
    let mut mle_hits = 0;
    for seed in 0..60u64 {
        let y = sample_at(20, 5.0, 500 + seed);
        if mle_fit(&y, &opts).unwrap().hit_bound {
            mle_hits += 1;
        }
        let q = q_mple_fit(&y, &opts).unwrap();
        assert!(!q.hit_bound, "seed {seed}");
        assert_eq!(q.lambda, Q_LAMBDA);
        assert_eq!(q.penalty, PenaltySpec::LogCauchy { c2: Q_C2 });
    }
    assert!(mle_hits > 0);
}

#[test]
fn explicit_start_is_used() {
    let y = sample_at(100, 1.0, 51);
    let start = Params::new(0.2, 0.1, 0.3);
    let fit = pem_fit(&y, 0.0, &PenaltySpec::Hyperbolic, Some(start), &PemOptions::default()).unwrap();
    let t0 = fit.trace[0];
    assert_eq!((t0.mu, t0.eta, t0.theta), (0.2, 0.1, 0.3));
    // the start is re-expressed under another map with the same α
    let map = ShapeMap::new(2.0).unwrap();
    let opts = PemOptions {
        shape_map: map,
        ..PemOptions::default()
    };
    let fit = pem_fit(&y, 0.0, &PenaltySpec::Hyperbolic, Some(start), &opts).unwrap();
    assert!((map.alpha(fit.trace[0].theta) - start.alpha()).abs() < 1e-12);
}

#[test]
fn rejects_bad_input() {
    let y = sample_at(30, 0.0, 1);
    assert!(matches!(
        pem_fit(&y, -1.0, &PenaltySpec::Hyperbolic, None, &PemOptions::default()),
        Err(Error::Domain(_) | Error::InvalidInput(_))
    ));
    assert!(matches!(
        mle_fit(&y[..3], &PemOptions::default()),
        Err(Error::InsufficientData { .. })
    ));
    let mut bad = y.clone();
    bad[3] = f64::NAN;
    assert!(matches!(
        mle_fit(&bad, &PemOptions::default()),
        Err(Error::InvalidInput(_))
    ));
    let opts = PemOptions {
        tol: 0.0,
        ..PemOptions::default()
    };
    assert!(mle_fit(&y, &opts).is_err());
}
