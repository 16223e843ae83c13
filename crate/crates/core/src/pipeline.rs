//! Per-series fitting and clustering of the fitted parameters.
//!
//! A [`SeriesTable`] holds one named sample per series (for instance the
//! log-IC50 values of one drug across cell lines). [`fit_all`] fits every
//! series independently and [`kmeans`] groups the `(μ̂, σ̂, α̂)` triples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::cv::CvConfig;
use crate::error::{Error, Result};
use crate::exec::{derive_seed, label_hash, map_indexed, Execution};
use crate::pem::PemOptions;
use crate::sim::{csv_err, fit_method, Method};

pub const FITS_SCHEMA: &str = "sn-mple/fits/v1";
pub const CLUSTERS_SCHEMA: &str = "sn-mple/clusters/v1";
pub const MIN_SERIES_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Header row of series names, one column per series.
    Wide,
    /// Header row `name,value`, one observation per row.
    Long,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(Layout::Wide),
            "long" => Ok(Layout::Long),
            other => Err(Error::InvalidInput(format!("unknown layout {other:?} (wide or long)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesTable {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl SeriesTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Long-layout CSV; reading it back with [`Layout::Long`] gives the same table.
    pub fn write_long<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "value"]).map_err(csv_err)?;
        for (name, values) in &self.entries {
            for v in values {
                w.write_record([name.as_str(), &format!("{v:?}")]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Bookkeeping from [`load_series`]. For every series,
/// `cells = used + dropped`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub cells: BTreeMap<String, usize>,
    pub dropped: BTreeMap<String, usize>,
    /// Series with fewer than four usable values; not in the table.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

impl LoadReport {
    pub fn total_cells(&self) -> usize {
        self.cells.values().sum()
    }

    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// Empty, `NA`, `NaN` and infinite cells count as missing; anything else
/// that fails to parse as a number is an error.
fn parse_cell(raw: &str, line: u64) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(Error::Parse {
            line,
            message: format!("not a number: {s:?}"),
        }),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn read_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            message: err.to_string(),
        },
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Read series from comma-separated text with a header row.
///
/// Lines starting with `#` are comments. Missing cells are dropped and
/// counted; series left with fewer than four values are excluded and
/// listed in the report.
pub fn load_series<R: Read>(source: R, layout: Layout) -> Result<(SeriesTable, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(read_err)?.clone();
    let mut order: Vec<String> = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut report = LoadReport::default();

    match layout {
        Layout::Wide => {
            if headers.is_empty() || headers.iter().all(str::is_empty) {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header row".into(),
                });
            }
            for (col, name) in headers.iter().enumerate() {
                let name = if name.is_empty() {
                    format!("col{}", col + 1)
                } else {
                    name.to_string()
                };
                if values.insert(name.clone(), Vec::new()).is_some() {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("duplicate series name {name:?}"),
                    });
                }
                order.push(name);
            }
            for rec in reader.records() {
                let rec = rec.map_err(read_err)?;
                let line = record_line(&rec);
                for (name, raw) in order.iter().zip(rec.iter()) {
                    *report.cells.entry(name.clone()).or_default() += 1;
                    match parse_cell(raw, line)? {
                        Some(v) => values.get_mut(name).expect("declared column").push(v),
                        None => *report.dropped.entry(name.clone()).or_default() += 1,
                    }
                }
            }
        }
        Layout::Long => {
            if headers.len() != 2 {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("long layout needs 2 columns (name,value), found {}", headers.len()),
                });
            }
            for rec in reader.records() {
                let rec = rec.map_err(read_err)?;
                let line = record_line(&rec);
                let name = rec[0].to_string();
                if name.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: "empty series name".into(),
                    });
                }
                if !values.contains_key(&name) {
                    order.push(name.clone());
                    values.insert(name.clone(), Vec::new());
                }
                *report.cells.entry(name.clone()).or_default() += 1;
                match parse_cell(&rec[1], line)? {
                    Some(v) => values.get_mut(&name).expect("inserted above").push(v),
                    None => *report.dropped.entry(name.clone()).or_default() += 1,
                }
            }
        }
    }

    let mut table = SeriesTable::default();
    for name in order {
        let v = values.remove(&name).expect("every ordered name has values");
        report.cells.entry(name.clone()).or_default();
        if v.len() < MIN_SERIES_LEN {
            report.warnings.push(format!(
                "series {name:?} has {} usable values (< {MIN_SERIES_LEN}); excluded",
                v.len()
            ));
            report.excluded.push(name);
        } else {
            table.entries.push((name, v));
        }
    }
    if table.is_empty() {
        return Err(Error::EmptyInput("no series with at least 4 usable values".into()));
    }
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub name: String,
    pub n: usize,
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub theta: f64,
    pub lambda: f64,
    /// `λ_cv`, only for the cross-validated method.
    pub lambda_cv: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub hit_bound: bool,
    pub error: Option<String>,
}

impl SeriesFit {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn point(&self) -> [f64; 3] {
        [self.mu, self.sigma, self.alpha]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitAllConfig {
    pub method: Method,
    /// `cv.seed` is the master seed; each series' fold seed is derived from
    /// it and the series name.
    pub cv: CvConfig,
    pub pem: PemOptions,
    pub exec: Execution,
}

impl Default for FitAllConfig {
    fn default() -> Self {
        Self {
            method: Method::CvMple,
            cv: CvConfig::default(),
            pem: PemOptions::default(),
            exec: Execution::default(),
        }
    }
}

/// Fit every series. A failed series gets a row with its error message.
///
/// Fold seeds depend on the series name only, so any subset of a table
/// fits to the same rows.
pub fn fit_all(table: &SeriesTable, cfg: &FitAllConfig) -> Vec<SeriesFit> {
    map_indexed(cfg.exec, table.len(), |i| {
        let (name, y) = &table.entries[i];
        let cv = CvConfig {
            seed: derive_seed(cfg.cv.seed, &[label_hash(name)]),
            // series already run in parallel
            exec: Execution::Sequential,
            ..cfg.cv
        };
        let mut row = SeriesFit {
            name: name.clone(),
            n: y.len(),
            mu: f64::NAN,
            sigma: f64::NAN,
            alpha: f64::NAN,
            theta: f64::NAN,
            lambda: f64::NAN,
            lambda_cv: None,
            loglik: f64::NAN,
            converged: false,
            hit_bound: false,
            error: None,
        };
        match fit_method(y, cfg.method, &cv, &cfg.pem) {
            Ok((fit, trace)) => {
                row.mu = fit.params.mu;
                row.sigma = fit.params.sigma();
                row.alpha = fit.params.alpha();
                row.theta = fit.params.theta;
                row.lambda = fit.lambda;
                row.lambda_cv = trace.map(|t| t.lambda_cv);
                row.loglik = fit.loglik;
                row.converged = fit.converged;
                row.hit_bound = fit.hit_bound;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    })
}

/// Number of fitted rows with `|α̂| > threshold`.
pub fn skew_count(fits: &[SeriesFit], threshold: f64) -> usize {
    fits.iter().filter(|f| f.ok() && f.alpha.abs() > threshold).count()
}

pub const FIT_COLUMNS: [&str; 12] = [
    "name",
    "n",
    "mu",
    "sigma",
    "alpha",
    "theta",
    "lambda",
    "lambda_cv",
    "loglik",
    "converged",
    "hit_bound",
    "error",
];

pub fn write_fits_csv<W: Write>(out: W, fits: &[SeriesFit]) -> Result<()> {
    let mut out = out;
    writeln!(out, "# schema={FITS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_COLUMNS).map_err(csv_err)?;
    for f in fits {
        w.write_record([
            f.name.clone(),
            f.n.to_string(),
            f.mu.to_string(),
            f.sigma.to_string(),
            f.alpha.to_string(),
            f.theta.to_string(),
            f.lambda.to_string(),
            f.lambda_cv.map(|l| l.to_string()).unwrap_or_default(),
            f.loglik.to_string(),
            f.converged.to_string(),
            f.hit_bound.to_string(),
            f.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub centres: Vec<[f64; 3]>,
    /// Cluster id per input point, in input order.
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ClusterReport {
    /// Series name to cluster id, for points that came from `fits`.
    pub fn named_assignment<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
        names
            .into_iter()
            .zip(&self.assignment)
            .map(|(n, &c)| (n.to_string(), c))
            .collect()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn nearest(p: &[f64; 3], centres: &[[f64; 3]]) -> (usize, f64) {
    centres
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn total_inertia(points: &[[f64; 3]], centres: &[[f64; 3]], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &j)| dist2(p, &centres[j])).sum()
}

/// k-means++ seeding followed by Lloyd iterations, on raw coordinates.
///
/// Points are sorted before seeding so the result does not depend on their
/// input order. A cluster that empties is re-seeded at the point farthest
/// from its current centre. Clusters are relabelled by decreasing size,
/// ties broken by lexicographic centre order.
pub fn kmeans(points: &[[f64; 3]], k: usize, seed: u64, max_iter: usize) -> Result<ClusterReport> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidInput(format!(
            "need 1 <= k <= {} points, got k={k}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("k-means points must be finite".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be positive".into()));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&points[a], &points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
    });
    let sorted: Vec<[f64; 3]> = order.iter().map(|&i| points[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = vec![sorted[rng.random_range(0..sorted.len())]];
    while centres.len() < k {
        let d: Vec<f64> = sorted.iter().map(|p| nearest(p, &centres).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = d.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        } else {
            rng.random_range(0..sorted.len())
        };
        centres.push(sorted[pick]);
    }

    let mut assign: Vec<usize> = sorted.iter().map(|p| nearest(p, &centres).0).collect();
    let mut inertia_trace = vec![total_inertia(&sorted, &centres, &assign)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in sorted.iter().zip(&assign) {
            counts[j] += 1;
            for c in 0..3 {
                sums[j][c] += p[c];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centres[j] = sums[j].map(|s| s / counts[j] as f64);
            } else {
                let far = (0..sorted.len())
                    .max_by(|&a, &b| {
                        dist2(&sorted[a], &centres[assign[a]]).total_cmp(&dist2(&sorted[b], &centres[assign[b]]))
                    })
                    .expect("at least one point");
                centres[j] = sorted[far];
                assign[far] = j;
            }
        }
        let next: Vec<usize> = sorted.iter().map(|p| nearest(p, &centres).0).collect();
        let stable = next == assign;
        assign = next;
        inertia_trace.push(total_inertia(&sorted, &centres, &assign));
        if stable {
            break;
        }
    }
    // centres of the final assignment
    let mut sizes = vec![0usize; k];
    let mut sums = vec![[0.0; 3]; k];
    for (p, &j) in sorted.iter().zip(&assign) {
        sizes[j] += 1;
        for c in 0..3 {
            sums[j][c] += p[c];
        }
    }
    for j in 0..k {
        if sizes[j] > 0 {
            centres[j] = sums[j].map(|s| s / sizes[j] as f64);
        }
    }

    let mut labels: Vec<usize> = (0..k).collect();
    labels.sort_by(|&a, &b| {
        sizes[b].cmp(&sizes[a]).then_with(|| {
            let (p, q) = (&centres[a], &centres[b]);
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        })
    });
    let mut relabel = vec![0; k];
    for (new, &old) in labels.iter().enumerate() {
        relabel[old] = new;
    }
    let mut assignment = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        assignment[orig] = relabel[assign[pos]];
    }
    let centres: Vec<[f64; 3]> = labels.iter().map(|&old| centres[old]).collect();
    let sizes: Vec<usize> = labels.iter().map(|&old| sizes[old]).collect();
    let inertia = total_inertia(points, &centres, &assignment);
    Ok(ClusterReport {
        k,
        centres,
        assignment,
        sizes,
        inertia,
        inertia_trace,
        iterations,
        seed,
    })
}

/// Cluster the successfully fitted rows. Returns the names that were
/// clustered alongside the report.
pub fn cluster_fits(fits: &[SeriesFit], k: usize, seed: u64, max_iter: usize) -> Result<(Vec<String>, ClusterReport)> {
    let used: Vec<&SeriesFit> = fits
        .iter()
        .filter(|f| f.ok() && f.point().iter().all(|v| v.is_finite()))
        .collect();
    if used.is_empty() {
        return Err(Error::EmptyInput("no successfully fitted series to cluster".into()));
    }
    let points: Vec<[f64; 3]> = used.iter().map(|f| f.point()).collect();
    let report = kmeans(&points, k, seed, max_iter)?;
    Ok((used.iter().map(|f| f.name.clone()).collect(), report))
}

/// Key/value text form of a cluster report.
pub fn write_cluster_report<W: Write>(mut out: W, names: &[String], report: &ClusterReport) -> Result<()> {
    writeln!(out, "schema={CLUSTERS_SCHEMA}")?;
    writeln!(out, "k={}", report.k)?;
    writeln!(out, "seed={}", report.seed)?;
    writeln!(out, "iterations={}", report.iterations)?;
    writeln!(out, "inertia={}", report.inertia)?;
    for (j, (c, size)) in report.centres.iter().zip(&report.sizes).enumerate() {
        writeln!(out, "cluster.{j}.size={size}")?;
        writeln!(out, "cluster.{j}.centre={},{},{}", c[0], c[1], c[2])?;
    }
    for (name, c) in names.iter().zip(&report.assignment) {
        writeln!(out, "assign.{name}={c}")?;
    }
    Ok(())
}
