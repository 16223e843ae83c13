//! K-fold cross-validation of the penalty coefficient.
//!
//! For each `λ` on a grid over `[0, ω₀·n]` the penalised fit is computed on
//! every training split and scored by the unpenalised log-likelihood of the
//! held-out fold; `CV_a(λ)` is minus the average of those scores.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dist::Params;
use crate::error::{Error, Result};
use crate::estimation::{check_lambda, loglik_unchecked, mom_init, PenaltySpec};
use crate::exec::{map_indexed, Execution};
use crate::pem::{pem_fit, FitResult, PemOptions};

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_OMEGA0: f64 = 0.05;
pub const DEFAULT_GRID_SIZE: usize = 40;

/// Relative tolerance under which two CV scores count as tied.
const TIE_RTOL: f64 = 1e-10;

/// A seeded partition of `0..n` into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    /// `assignment[i]` is the fold of observation `i`.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &j in &self.assignment {
            sizes[j] += 1;
        }
        sizes
    }

    /// `(training, held-out)` values for fold `j`.
    pub fn split(&self, y: &[f64], j: usize) -> (Vec<f64>, Vec<f64>) {
        let mut train = Vec::with_capacity(y.len());
        let mut test = Vec::new();
        for (&v, &fold) in y.iter().zip(&self.assignment) {
            if fold == j {
                test.push(v);
            } else {
                train.push(v);
            }
        }
        (train, test)
    }

    /// The same partition with fold `j` renamed `perm[j]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<FoldPlan> {
        let mut seen = vec![false; self.k];
        if perm.len() != self.k
            || perm
                .iter()
                .any(|&p| p >= self.k || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidInput(
                "relabeling must be a permutation of the folds".into(),
            ));
        }
        Ok(FoldPlan {
            assignment: self.assignment.iter().map(|&j| perm[j]).collect(),
            ..self.clone()
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if self.assignment.len() != len || self.n != len {
            return Err(Error::InvalidInput(format!(
                "fold plan covers {} observations, sample has {len}",
                self.assignment.len()
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle, then round-robin assignment.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidInput(format!("need 2 <= K <= n, got K={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { n, k, assignment, seed })
}

/// `{0}` followed by `size − 1` geometrically spaced points ending at `ω₀·n`.
pub fn lambda_grid(n: usize, omega0: f64, size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::InvalidInput(format!("grid needs at least 2 points, got {size}")));
    }
    if !(omega0.is_finite() && omega0 > 0.0) || n == 0 {
        return Err(Error::InvalidInput(format!(
            "need omega0 > 0 and n > 0, got {omega0}, {n}"
        )));
    }
    let hi = omega0 * n as f64;
    let lo = hi * 1e-4;
    let m = size - 1;
    let mut grid = Vec::with_capacity(size);
    grid.push(0.0);
    if m == 1 {
        grid.push(hi);
    } else {
        let ratio = (hi / lo).ln();
        for i in 0..m {
            grid.push(lo * (ratio * i as f64 / (m - 1) as f64).exp());
        }
        grid[size - 1] = hi;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub omega0: f64,
    pub grid_size: usize,
    pub penalty: PenaltySpec,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_FOLDS,
            omega0: DEFAULT_OMEGA0,
            grid_size: DEFAULT_GRID_SIZE,
            penalty: PenaltySpec::Hyperbolic,
            seed: 1,
            exec: Execution::default(),
        }
    }
}

/// Summary of one training-split fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldFit {
    pub lambda_index: usize,
    pub fold: usize,
    pub params: Params,
    /// `l_inc` of the fitted parameters on the held-out fold.
    pub heldout_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFailure {
    pub lambda_index: usize,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTrace {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub omega0: f64,
    pub grid: Vec<f64>,
    /// `CV_a(λ)` per grid point; `None` where a fold fit failed.
    pub scores: Vec<Option<f64>>,
    pub lambda_cv: f64,
    pub lambda_cv_index: usize,
    pub per_fold: Vec<FoldFit>,
    pub failures: Vec<CvFailure>,
}

fn fit_fold(
    y: &[f64],
    plan: &FoldPlan,
    fold: usize,
    lambda_index: usize,
    lambda: f64,
    spec: &PenaltySpec,
    init: Params,
    opts: &PemOptions,
) -> Result<FoldFit> {
    let (train, test) = plan.split(y, fold);
    let tag = |e| Error::Fold {
        fold,
        source: Box::new(e),
    };
    let fit = pem_fit(&train, lambda, spec, Some(init), opts).map_err(tag)?;
    let heldout = loglik_unchecked(&fit.params, &test);
    if !heldout.is_finite() {
        return Err(tag(Error::NumericalFailure {
            message: format!("held-out log-likelihood is {heldout}"),
            trace: fit.trace,
        }));
    }
    Ok(FoldFit {
        lambda_index,
        fold,
        params: fit.params,
        heldout_loglik: heldout,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

fn average_error(fits: &[FoldFit]) -> f64 {
    -fits.iter().map(|f| f.heldout_loglik).sum::<f64>() / fits.len() as f64
}

/// `CV_a(λ)`: minus the mean held-out log-likelihood over the folds.
///
/// Every training fit starts from the moment estimate of the full sample.
pub fn cv_average_error(y: &[f64], plan: &FoldPlan, lambda: f64, spec: &PenaltySpec, opts: &PemOptions) -> Result<f64> {
    plan.check_len(y.len())?;
    check_lambda(lambda)?;
    let init = mom_init(y, opts.shape_map)?.params;
    let fits = (0..plan.k)
        .map(|j| fit_fold(y, plan, j, 0, lambda, spec, init, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_error(&fits))
}

/// Evaluate `CV_a` over the grid and pick the smallest minimising `λ`.
pub fn select_lambda(y: &[f64], cfg: &CvConfig, opts: &PemOptions) -> Result<CvTrace> {
    let plan = make_folds(y.len(), cfg.k, cfg.seed)?;
    let grid = lambda_grid(y.len(), cfg.omega0, cfg.grid_size)?;
    select_lambda_on(y, &plan, &grid, cfg, opts)
}

/// [`select_lambda`] with an explicit partition and grid.
pub fn select_lambda_on(
    y: &[f64],
    plan: &FoldPlan,
    grid: &[f64],
    cfg: &CvConfig,
    opts: &PemOptions,
) -> Result<CvTrace> {
    plan.check_len(y.len())?;
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty lambda grid".into()));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    let init = mom_init(y, opts.shape_map)?.params;
    let k = plan.k;
    let results = map_indexed(cfg.exec, grid.len() * k, |task| {
        let (li, fold) = (task / k, task % k);
        fit_fold(y, plan, fold, li, grid[li], &cfg.penalty, init, opts)
    });

    let mut per_fold = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut scores = vec![None; grid.len()];
    for (li, chunk) in results.chunks(k).enumerate() {
        let mut ok = Vec::with_capacity(k);
        for (fold, r) in chunk.iter().enumerate() {
            match r {
                Ok(f) => ok.push(*f),
                Err(e) => failures.push(CvFailure {
                    lambda_index: li,
                    fold,
                    message: e.to_string(),
                }),
            }
        }
        if ok.len() == k {
            scores[li] = Some(average_error(&ok));
        }
        per_fold.extend(ok);
    }

    let best = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::NumericalFailure {
            message: "cross-validation failed at every grid point".into(),
            trace: Vec::new(),
        });
    }
    let tie = TIE_RTOL * best.abs().max(1.0);
    let lambda_cv_index = scores
        .iter()
        .position(|s| matches!(s, Some(v) if *v <= best + tie))
        .expect("a finite minimum exists");

    Ok(CvTrace {
        n: y.len(),
        k,
        seed: plan.seed,
        omega0: cfg.omega0,
        grid: grid.to_vec(),
        scores,
        lambda_cv: grid[lambda_cv_index],
        lambda_cv_index,
        per_fold,
        failures,
    })
}

/// Select `λ_cv` by cross-validation, then refit the full sample at it.
pub fn cv_fit(y: &[f64], cfg: &CvConfig, opts: &PemOptions) -> Result<(FitResult, CvTrace)> {
    let trace = select_lambda(y, cfg, opts)?;
    let fit = pem_fit(y, trace.lambda_cv, &cfg.penalty, None, opts)?;
    Ok((fit, trace))
}

/// `max_j max{Σ_{i∉fold j}(1 − z_{i0}²)/π, 0}` with `z_{i0}` standardised by
/// the supplied (true) location and scale.
pub fn lambda_r(y: &[f64], plan: &FoldPlan, params0: &Params) -> Result<f64> {
    plan.check_len(y.len())?;
    let sigma = params0.sigma();
    let mut per_fold = vec![0.0; plan.k];
    let mut total = 0.0;
    for (&v, &j) in y.iter().zip(&plan.assignment) {
        let z = (v - params0.mu) / sigma;
        let term = 1.0 - z * z;
        per_fold[j] += term;
        total += term;
    }
    Ok(per_fold
        .iter()
        .map(|held| ((total - held) / PI).max(0.0))
        .fold(0.0, f64::max))
}

/// `max{Σ(1 − z_{i0}²)/π, 0}`: above this `λ` the penalised fit of a
/// symmetric sample is exactly symmetric.
pub fn symmetry_threshold(y: &[f64], params0: &Params) -> f64 {
    let sigma = params0.sigma();
    let s: f64 = y
        .iter()
        .map(|&v| {
            let z = (v - params0.mu) / sigma;
            1.0 - z * z
        })
        .sum();
    (s / PI).max(0.0)
}
