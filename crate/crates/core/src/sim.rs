//! Reproducible simulation studies.
//!
//! Setting 1 tracks how the selected penalty `λ_cv` scales with `n`; setting 2
//! compares the estimation error of the cross-validated fit, the
//! fixed-penalty log-Cauchy fit and the MLE when `(μ₀, σ₀)` are themselves
//! drawn at random. Every replicate gets its own seed derived from the
//! master seed and its `(α₀, n, replicate)` coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::cv::{cv_fit, CvConfig, DEFAULT_FOLDS, DEFAULT_GRID_SIZE, DEFAULT_OMEGA0};
use crate::dist::{sample_with, Params};
use crate::error::{Error, Result};
use crate::estimation::PenaltySpec;
use crate::exec::{derive_seed, map_indexed, Execution};
use crate::pem::{mle_fit, q_mple_fit, FitResult, PemOptions};

pub const RECORDS_SCHEMA: &str = "sn-mple/sim-records/v1";
pub const SUMMARY_SCHEMA: &str = "sn-mple/sim-summary/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum Law {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Law {
    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            Law::Fixed { value } if value.is_finite() => Ok(()),
            Law::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && lo < hi => Ok(()),
            _ => Err(Error::InvalidInput(format!("malformed {name} law {self:?}"))),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Fixed { value } => value,
            Law::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "setting1")]
    LambdaScaling,
    #[serde(rename = "setting2")]
    ErrorComparison,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::LambdaScaling => "setting1",
            Setting::ErrorComparison => "setting2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CvMple,
    QMple,
    Mle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CvMple, Method::QMple, Method::Mle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::CvMple => "cv_mple",
            Method::QMple => "q_mple",
            Method::Mle => "mle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cv_mple" | "cv" => Ok(Method::CvMple),
            "q_mple" | "q" => Ok(Method::QMple),
            "mle" => Ok(Method::Mle),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

/// Fit `y` by one of the three estimators. `cv` is only used by `CvMple`.
pub fn fit_method(
    y: &[f64],
    method: Method,
    cv: &CvConfig,
    opts: &PemOptions,
) -> Result<(FitResult, Option<crate::cv::CvTrace>)> {
    match method {
        Method::CvMple => cv_fit(y, cv, opts).map(|(f, t)| (f, Some(t))),
        Method::QMple => q_mple_fit(y, opts).map(|f| (f, None)),
        Method::Mle => mle_fit(y, opts).map(|f| (f, None)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub alphas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub k: usize,
    pub omega0: f64,
    pub grid_size: usize,
    pub penalty: PenaltySpec,
    pub seed: u64,
    pub mu0_law: Law,
    pub sigma0_law: Law,
    pub pem: PemOptions,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::setting1()
    }
}

impl SimConfig {
    /// `(μ₀, σ₀) = (0, 1)`, `α₀ ∈ {0, 2, 3, 4}`, eight sample sizes, 20 replicates.
    pub fn setting1() -> Self {
        Self {
            alphas: vec![0.0, 2.0, 3.0, 4.0],
            sizes: vec![50, 100, 200, 300, 400, 500, 600, 1000],
            replicates: 20,
            k: DEFAULT_FOLDS,
            omega0: DEFAULT_OMEGA0,
            grid_size: DEFAULT_GRID_SIZE,
            penalty: PenaltySpec::Hyperbolic,
            seed: 1,
            mu0_law: Law::Fixed { value: 0.0 },
            sigma0_law: Law::Fixed { value: 1.0 },
            pem: PemOptions::default(),
            exec: Execution::default(),
        }
    }

    /// Random `μ₀ ~ U(−2, 2)`, `σ₀ ~ U(0.5, 1.5)`, `α₀ ∈ {0, 1, 2, 3, 5}`,
    /// sample sizes 300 to 1000.
    pub fn setting2() -> Self {
        Self {
            alphas: vec![0.0, 1.0, 2.0, 3.0, 5.0],
            sizes: vec![300, 400, 500, 600, 700, 1000],
            mu0_law: Law::Uniform { lo: -2.0, hi: 2.0 },
            sigma0_law: Law::Uniform { lo: 0.5, hi: 1.5 },
            ..Self::setting1()
        }
    }

    /// Setting 2 with the small sample sizes 50 to 400.
    pub fn setting2_small() -> Self {
        Self {
            sizes: vec![50, 100, 200, 400],
            ..Self::setting2()
        }
    }

    pub fn preset(name: &str) -> Result<(Setting, Self)> {
        match name {
            "setting1" => Ok((Setting::LambdaScaling, Self::setting1())),
            "setting2" => Ok((Setting::ErrorComparison, Self::setting2())),
            "setting2-small" => Ok((Setting::ErrorComparison, Self::setting2_small())),
            other => Err(Error::InvalidInput(format!(
                "unknown preset {other:?} (expected setting1, setting2, setting2-small)"
            ))),
        }
    }

    /// Shrink sample sizes and replicate counts by `factor` for quick runs.
    /// Sizes never drop below `2K`, replicates never below 2.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidInput(format!("scale must be > 0, got {factor}")));
        }
        let mut sizes: Vec<usize> = self
            .sizes
            .iter()
            .map(|&n| ((n as f64 * factor).round() as usize).max(2 * self.k))
            .collect();
        sizes.dedup();
        Ok(Self {
            sizes,
            replicates: ((self.replicates as f64 * factor).round() as usize).max(2),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidInput("replicates must be at least 2".into()));
        }
        if self.alphas.is_empty() || self.sizes.is_empty() {
            return Err(Error::InvalidInput("alphas and sizes must be nonempty".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite alpha {a}")));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < self.k.max(4)) {
            return Err(Error::InvalidInput(format!(
                "sample size {n} smaller than K={}",
                self.k
            )));
        }
        self.mu0_law.validate("mu0")?;
        self.sigma0_law.validate("sigma0")?;
        if let Law::Fixed { value } = self.sigma0_law {
            if value <= 0.0 {
                return Err(Error::InvalidInput("sigma0 must be positive".into()));
            }
        }
        if let Law::Uniform { lo, .. } = self.sigma0_law {
            if lo <= 0.0 {
                return Err(Error::InvalidInput("sigma0 law must be positive".into()));
            }
        }
        Ok(())
    }

    fn cv_config(&self, seed: u64) -> CvConfig {
        CvConfig {
            k: self.k,
            omega0: self.omega0,
            grid_size: self.grid_size,
            penalty: self.penalty,
            seed,
            // replicates already run in parallel
            exec: Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub setting: Setting,
    pub alpha0: f64,
    pub n: usize,
    pub replicate: usize,
    pub method: Method,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub alpha_hat: f64,
    /// Selected penalty, `cv_mple` only.
    pub lambda_cv: Option<f64>,
    pub err_mu: f64,
    pub err_sigma: f64,
    pub err_alpha: f64,
    pub hit_bound: bool,
    pub converged: bool,
    pub runtime_ms: f64,
    /// Set when the fit failed; the estimates are then NaN.
    pub error: Option<String>,
}

impl SimRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

struct Cell {
    alpha0: f64,
    n: usize,
    replicate: usize,
}

fn cells(cfg: &SimConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &alpha0 in &cfg.alphas {
        for &n in &cfg.sizes {
            for replicate in 0..cfg.replicates {
                out.push(Cell { alpha0, n, replicate });
            }
        }
    }
    out
}

fn run_cell(cfg: &SimConfig, setting: Setting, cell: &Cell, methods: &[Method]) -> Vec<SimRecord> {
    let seed = derive_seed(cfg.seed, &[cell.alpha0.to_bits(), cell.n as u64, cell.replicate as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu0 = cfg.mu0_law.draw(&mut rng);
    let sigma0 = cfg.sigma0_law.draw(&mut rng);
    let truth = Params::from_natural(mu0, sigma0, cell.alpha0, cfg.pem.shape_map)
        .expect("validated laws give finite positive parameters");
    let y = sample_with(&mut rng, cell.n, &truth);
    let cv = cfg.cv_config(derive_seed(seed, &[1]));

    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let result = fit_method(&y, method, &cv, &cfg.pem);
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let base = SimRecord {
                setting,
                alpha0: cell.alpha0,
                n: cell.n,
                replicate: cell.replicate,
                method,
                mu0,
                sigma0,
                mu_hat: f64::NAN,
                sigma_hat: f64::NAN,
                alpha_hat: f64::NAN,
                lambda_cv: None,
                err_mu: f64::NAN,
                err_sigma: f64::NAN,
                err_alpha: f64::NAN,
                hit_bound: false,
                converged: false,
                runtime_ms,
                error: None,
            };
            match result {
                Ok((fit, trace)) => {
                    let p = fit.params;
                    SimRecord {
                        mu_hat: p.mu,
                        sigma_hat: p.sigma(),
                        alpha_hat: p.alpha(),
                        lambda_cv: trace.map(|t| t.lambda_cv),
                        err_mu: p.mu - mu0,
                        err_sigma: p.sigma() - sigma0,
                        err_alpha: p.alpha() - cell.alpha0,
                        hit_bound: fit.hit_bound,
                        converged: fit.converged,
                        ..base
                    }
                }
                Err(e) => SimRecord {
                    error: Some(e.to_string()),
                    ..base
                },
            }
        })
        .collect()
}

fn run(cfg: &SimConfig, setting: Setting, methods: &[Method]) -> Result<Vec<SimRecord>> {
    cfg.validate()?;
    let cells = cells(cfg);
    let nested = map_indexed(cfg.exec, cells.len(), |i| run_cell(cfg, setting, &cells[i], methods));
    Ok(nested.into_iter().flatten().collect())
}

/// Setting 1: one cross-validated fit per `(α₀, n, replicate)`.
pub fn run_setting1(cfg: &SimConfig) -> Result<Vec<SimRecord>> {
    run(cfg, Setting::LambdaScaling, &[Method::CvMple])
}

/// Setting 2: all three estimators on each replicate.
pub fn run_setting2(cfg: &SimConfig) -> Result<Vec<SimRecord>> {
    run(cfg, Setting::ErrorComparison, &Method::ALL)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sample mean and (n − 1) variance; variance is NaN below two values.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: Setting,
    pub alpha0: f64,
    pub n: usize,
    pub method: Method,
    pub count: usize,
    pub failed: usize,
    pub bound_hits: usize,
    pub median_bias_mu: f64,
    pub se_mu: f64,
    pub median_bias_sigma: f64,
    pub se_sigma: f64,
    pub median_bias_alpha: f64,
    pub se_alpha: f64,
    /// Fewer than two successful replicates: the SE columns are reported as 0.
    pub se_undefined: bool,
    pub mean_lambda_over_n: Option<f64>,
    pub var_lambda_over_n: Option<f64>,
    pub mean_lambda_over_sqrt_n: Option<f64>,
    pub var_lambda_over_sqrt_n: Option<f64>,
}

/// Median bias and standard error per `(setting, α₀, n, method)`.
///
/// SE is the sample standard deviation of the errors across replicates.
pub fn summarize(records: &[SimRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no simulation records to summarise".into()));
    }
    let mut keys: Vec<(Setting, u64, usize, Method)> = Vec::new();
    for r in records {
        let key = (r.setting, r.alpha0.to_bits(), r.n, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    Ok(keys
        .into_iter()
        .map(|(setting, alpha_bits, n, method)| {
            let group: Vec<&SimRecord> = records
                .iter()
                .filter(|r| r.setting == setting && r.alpha0.to_bits() == alpha_bits && r.n == n && r.method == method)
                .collect();
            let ok: Vec<&&SimRecord> = group.iter().filter(|r| r.ok()).collect();
            let col = |f: fn(&SimRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let se_undefined = ok.len() < 2;
            let stat = |xs: Vec<f64>| {
                let se = if se_undefined { 0.0 } else { mean_var(&xs).1.sqrt() };
                (median(&xs), se)
            };
            let (median_bias_mu, se_mu) = stat(col(|r| r.err_mu));
            let (median_bias_sigma, se_sigma) = stat(col(|r| r.err_sigma));
            let (median_bias_alpha, se_alpha) = stat(col(|r| r.err_alpha));
            let lambdas: Vec<f64> = ok.iter().filter_map(|r| r.lambda_cv).collect();
            let (lam_n, lam_sqrt) = if lambdas.is_empty() {
                ((None, None), (None, None))
            } else {
                let over_n: Vec<f64> = lambdas.iter().map(|l| l / n as f64).collect();
                let over_sqrt: Vec<f64> = lambdas.iter().map(|l| l / (n as f64).sqrt()).collect();
                let (a, b) = mean_var(&over_n);
                let (c, d) = mean_var(&over_sqrt);
                ((Some(a), Some(b)), (Some(c), Some(d)))
            };
            SummaryRow {
                setting,
                alpha0: f64::from_bits(alpha_bits),
                n,
                method,
                count: group.len(),
                failed: group.len() - ok.len(),
                bound_hits: ok.iter().filter(|r| r.hit_bound).count(),
                median_bias_mu,
                se_mu,
                median_bias_sigma,
                se_sigma,
                median_bias_alpha,
                se_alpha,
                se_undefined,
                mean_lambda_over_n: lam_n.0,
                var_lambda_over_n: lam_n.1,
                mean_lambda_over_sqrt_n: lam_sqrt.0,
                var_lambda_over_sqrt_n: lam_sqrt.1,
            }
        })
        .collect())
}

pub const RECORD_COLUMNS: [&str; 17] = [
    "setting",
    "alpha0",
    "n",
    "replicate",
    "method",
    "mu0",
    "sigma0",
    "mu_hat",
    "sigma_hat",
    "alpha_hat",
    "lambda_cv",
    "err_mu",
    "err_sigma",
    "err_alpha",
    "hit_bound",
    "converged",
    "error",
];

pub const SUMMARY_COLUMNS: [&str; 18] = [
    "setting",
    "alpha0",
    "n",
    "method",
    "count",
    "failed",
    "bound_hits",
    "median_bias_mu",
    "se_mu",
    "median_bias_sigma",
    "se_sigma",
    "median_bias_alpha",
    "se_alpha",
    "se_undefined",
    "mean_lambda_over_n",
    "var_lambda_over_n",
    "mean_lambda_over_sqrt_n",
    "var_lambda_over_sqrt_n",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Records as CSV behind a `# schema` comment line. Runtimes are appended
/// as a last column only when `with_runtime` is set, so default output is
/// reproducible byte for byte.
pub fn write_records_csv<W: Write>(out: W, records: &[SimRecord], with_runtime: bool) -> Result<()> {
    let mut out = out;
    writeln!(out, "# schema={RECORDS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RECORD_COLUMNS.to_vec();
    if with_runtime {
        header.push("runtime_ms");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.setting.to_string(),
            r.alpha0.to_string(),
            r.n.to_string(),
            r.replicate.to_string(),
            r.method.to_string(),
            r.mu0.to_string(),
            r.sigma0.to_string(),
            r.mu_hat.to_string(),
            r.sigma_hat.to_string(),
            r.alpha_hat.to_string(),
            opt(r.lambda_cv),
            r.err_mu.to_string(),
            r.err_sigma.to_string(),
            r.err_alpha.to_string(),
            r.hit_bound.to_string(),
            r.converged.to_string(),
            r.error.clone().unwrap_or_default(),
        ];
        if with_runtime {
            row.push(format!("{:.3}", r.runtime_ms));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# schema={SUMMARY_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.setting.to_string(),
            r.alpha0.to_string(),
            r.n.to_string(),
            r.method.to_string(),
            r.count.to_string(),
            r.failed.to_string(),
            r.bound_hits.to_string(),
            r.median_bias_mu.to_string(),
            r.se_mu.to_string(),
            r.median_bias_sigma.to_string(),
            r.se_sigma.to_string(),
            r.median_bias_alpha.to_string(),
            r.se_alpha.to_string(),
            r.se_undefined.to_string(),
            opt(r.mean_lambda_over_n),
            opt(r.var_lambda_over_n),
            opt(r.mean_lambda_over_sqrt_n),
            opt(r.var_lambda_over_sqrt_n),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}
