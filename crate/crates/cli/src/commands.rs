use serde_json::Value;
use std::io::{Read, Write};

use sn_mple::cv::CvConfig;
use sn_mple::dist::{sample, Params, ShapeMap};
use sn_mple::exec::Execution;
use sn_mple::pem::{PemOptions, Q_C2, Q_LAMBDA};
use sn_mple::pipeline::{self, FitAllConfig};
use sn_mple::sim::{self, Method, Setting, SimConfig};
use sn_mple::Error;

use crate::input::{open, parse_values};
use crate::output::{in_dir, join, sink, Header};
use crate::{Cli, ClusterArgs, Command, EstimationArgs, FitArgs, Format, SampleArgs, SimulateArgs};

pub const FIT_SCHEMA: &str = "sn-mple/fit/v1";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn is_numerical(e: &Error) -> bool {
    match e {
        Error::NumericalFailure { .. } => true,
        Error::Fold { source, .. } => is_numerical(source),
        _ => false,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if is_numerical(&e) { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Fit(a) => fit(a, cli.seed, exec),
        Command::Sample(a) => sample_cmd(a, cli.seed),
        Command::Simulate(a) => simulate(a, cli.seed, exec),
        Command::Cluster(a) => cluster(a, cli.seed, exec),
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

impl EstimationArgs {
    fn pem(&self) -> Result<PemOptions, Failure> {
        if self.tol.is_nan() || self.tol <= 0.0 || self.max_iter == 0 {
            return Err(invalid("--tol must be > 0 and --max-iter >= 1"));
        }
        Ok(PemOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..PemOptions::default()
        })
    }

    fn cv(&self, seed: u64, exec: Execution) -> CvConfig {
        CvConfig {
            k: self.folds,
            omega0: self.omega0,
            grid_size: self.grid_size,
            penalty: self.penalty,
            seed,
            exec,
        }
    }

    fn echo(&self, h: &mut Header) {
        let method = Method::from(self.method);
        h.set("method", method);
        match method {
            Method::CvMple => {
                h.set("K", self.folds)
                    .set("omega0", self.omega0)
                    .set("grid_size", self.grid_size);
                h.set("penalty", self.penalty);
            }
            Method::QMple => {
                h.set("penalty", "log-cauchy")
                    .set("lambda", format!("{Q_LAMBDA:.6}"))
                    .set("c2", format!("{Q_C2:.6}"));
            }
            Method::Mle => {
                h.set("lambda", 0);
            }
        }
        h.set("tol", self.tol).set("max_iter", self.max_iter);
    }
}

fn fit(a: &FitArgs, seed: u64, exec: Execution) -> Outcome {
    let (source, text) = match (&a.input, &a.data) {
        (Some(path), _) => {
            let mut text = String::new();
            open(path)?
                .read_to_string(&mut text)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            (path.display().to_string(), text)
        }
        (None, Some(d)) => ("inline".to_string(), d.clone()),
        (None, None) => return Err(invalid("no input given")),
    };
    let y = parse_values(&text)?;
    if y.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: y.len(),
        }
        .into());
    }
    let method = Method::from(a.est.method);
    let pem = a.est.pem()?;
    let cv = a.est.cv(seed, exec);
    let (fit, trace) = sim::fit_method(&y, method, &cv, &pem)?;

    let mut h = Header::new("fit");
    h.set("input", &source).set("n", y.len());
    a.est.echo(&mut h);
    h.set("seed", seed);

    let p = fit.params;
    let row: Vec<(&str, String)> = vec![
        ("method", method.to_string()),
        ("n", y.len().to_string()),
        ("mu", p.mu.to_string()),
        ("sigma", p.sigma().to_string()),
        ("alpha", p.alpha().to_string()),
        ("theta", p.theta.to_string()),
        ("lambda", fit.lambda.to_string()),
        ("loglik", fit.loglik.to_string()),
        ("penalized_loglik", fit.penalized_loglik.to_string()),
        ("iterations", fit.iterations.to_string()),
        ("converged", fit.converged.to_string()),
        ("hit_bound", fit.hit_bound.to_string()),
    ];

    let mut out = sink(a.output.as_deref())?;
    h.write(&mut out)?;
    match a.format {
        Format::Kv => {
            writeln!(out, "schema={FIT_SCHEMA}")?;
            for (k, v) in &row {
                writeln!(out, "{k}={v}")?;
            }
            if let Some(t) = &trace {
                writeln!(out, "cv.lambda_cv={}", t.lambda_cv)?;
                writeln!(out, "cv.lambda_cv_index={}", t.lambda_cv_index)?;
                writeln!(out, "cv.failures={}", t.failures.len())?;
                for (i, (l, s)) in t.grid.iter().zip(&t.scores).enumerate() {
                    let s = s.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
                    writeln!(out, "cv.score.{i}={l},{s}")?;
                }
            }
        }
        Format::Csv => {
            writeln!(out, "# schema={FIT_SCHEMA}")?;
            writeln!(out, "{}", row.iter().map(|r| r.0).collect::<Vec<_>>().join(","))?;
            writeln!(
                out,
                "{}",
                row.iter().map(|r| r.1.as_str()).collect::<Vec<_>>().join(",")
            )?;
            if let Some(t) = &trace {
                writeln!(out, "# cv-trace lambda_cv={}", t.lambda_cv)?;
                writeln!(out, "lambda,cv_score")?;
                for (l, s) in t.grid.iter().zip(&t.scores) {
                    writeln!(out, "{l},{}", s.map(|v| v.to_string()).unwrap_or_default())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn sample_cmd(a: &SampleArgs, seed: u64) -> Outcome {
    if a.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let params = Params::from_natural(a.mu, a.sigma, a.alpha, ShapeMap::default())?;
    let y = sample(a.n, &params, seed)?;
    let mut h = Header::new("sample");
    h.set("mu", a.mu)
        .set("sigma", a.sigma)
        .set("alpha", a.alpha)
        .set("n", a.n)
        .set("seed", seed);
    let mut out = sink(a.output.as_deref())?;
    h.write(&mut out)?;
    for v in y {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a simulation file: a `setting` plus any [`SimConfig`] fields, which
/// override the defaults of that setting.
fn read_sim_file(path: &std::path::Path) -> Result<(Setting, SimConfig), Failure> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| invalid(format!("{}: line {}: {e}", path.display(), e.line()));
    let mut doc: serde_json::Map<String, Value> = serde_json::from_str(&text).map_err(bad)?;
    let setting: Setting = match doc.remove("setting") {
        Some(v) => serde_json::from_value(v).map_err(bad)?,
        None => return Err(invalid(format!("{}: missing \"setting\"", path.display()))),
    };
    let base = match setting {
        Setting::LambdaScaling => SimConfig::setting1(),
        Setting::ErrorComparison => SimConfig::setting2(),
    };
    let Value::Object(mut merged) = serde_json::to_value(&base).map_err(bad)? else {
        unreachable!("configurations serialise to objects")
    };
    merged.extend(doc);
    let cfg = serde_json::from_value(Value::Object(merged)).map_err(bad)?;
    Ok((setting, cfg))
}

fn simulate(a: &SimulateArgs, seed: u64, exec: Execution) -> Outcome {
    let (label, setting, base) = match (&a.preset, &a.config) {
        (Some(name), _) => {
            let (setting, cfg) = SimConfig::preset(name)?;
            (name.clone(), setting, cfg)
        }
        (None, Some(path)) => {
            let (setting, cfg) = read_sim_file(path)?;
            (path.display().to_string(), setting, cfg)
        }
        (None, None) => return Err(invalid("give a preset or --config")),
    };
    let mut cfg = base.scaled(a.scale)?;
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    cfg.seed = seed;
    cfg.exec = exec;
    cfg.validate()?;

    let mut h = Header::new("simulate");
    h.set("config", &label)
        .set("setting", setting)
        .set("scale", a.scale)
        .set("seed", seed)
        .set("alphas", join(&cfg.alphas))
        .set("sizes", join(&cfg.sizes))
        .set("replicates", cfg.replicates)
        .set("K", cfg.k)
        .set("omega0", cfg.omega0)
        .set("grid_size", cfg.grid_size)
        .set("penalty", cfg.penalty)
        .set("mu0_law", law(&cfg.mu0_law))
        .set("sigma0_law", law(&cfg.sigma0_law))
        .set("q_lambda", format!("{Q_LAMBDA:.6}"))
        .set("q_c2", format!("{Q_C2:.6}"))
        .set("tol", cfg.pem.tol);

    let records = match setting {
        Setting::LambdaScaling => sim::run_setting1(&cfg)?,
        Setting::ErrorComparison => sim::run_setting2(&cfg)?,
    };
    let failed = records.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        eprintln!("sncv: {failed} of {} fits failed; see the error column", records.len());
    }
    let summary = sim::summarize(&records)?;

    match &a.out {
        Some(dir) => {
            let mut rec = sink(Some(&in_dir(dir, "records.csv")?))?;
            h.write(&mut rec)?;
            sim::write_records_csv(&mut rec, &records, a.runtime)?;
            rec.flush()?;
            let mut sum = sink(Some(&in_dir(dir, "summary.csv")?))?;
            h.write(&mut sum)?;
            sim::write_summary_csv(&mut sum, &summary)?;
            sum.flush()?;
        }
        None => {
            let mut out = sink(None)?;
            h.write(&mut out)?;
            sim::write_summary_csv(&mut out, &summary)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn law(l: &sim::Law) -> String {
    match l {
        sim::Law::Fixed { value } => format!("fixed:{value}"),
        sim::Law::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
    }
}

fn cluster(a: &ClusterArgs, seed: u64, exec: Execution) -> Outcome {
    let (table, report) = pipeline::load_series(open(&a.input)?, a.layout.into())?;
    for w in &report.warnings {
        eprintln!("sncv: {w}");
    }
    let k = a.k as usize;
    if k > table.len() {
        return Err(invalid(format!("--k {k} exceeds the {} usable series", table.len())));
    }
    let cfg = FitAllConfig {
        method: a.est.method.into(),
        cv: a.est.cv(seed, exec),
        pem: a.est.pem()?,
        exec,
    };
    let fits = pipeline::fit_all(&table, &cfg);
    for f in fits.iter().filter(|f| !f.ok()) {
        eprintln!("sncv: series {:?} failed: {}", f.name, f.error.as_deref().unwrap_or(""));
    }
    let (names, clusters) = pipeline::cluster_fits(&fits, k, seed, a.kmeans_iter)?;

    let mut h = Header::new("cluster");
    h.set("input", a.input.display())
        .set("layout", format!("{:?}", a.layout).to_lowercase())
        .set("series", table.len())
        .set("cells", report.total_cells())
        .set("dropped", report.total_dropped())
        .set("excluded", join(&report.excluded))
        .set("k", k)
        .set("kmeans_iter", a.kmeans_iter)
        .set("threshold", a.threshold);
    a.est.echo(&mut h);
    h.set("seed", seed);

    let write_report = |out: &mut dyn Write| -> Result<(), Failure> {
        pipeline::write_cluster_report(&mut *out, &names, &clusters)?;
        writeln!(out, "skew_threshold={}", a.threshold)?;
        writeln!(out, "skew_count={}", pipeline::skew_count(&fits, a.threshold))?;
        Ok(())
    };
    match &a.out {
        Some(dir) => {
            let mut f = sink(Some(&in_dir(dir, "fits.csv")?))?;
            h.write(&mut f)?;
            pipeline::write_fits_csv(&mut f, &fits)?;
            f.flush()?;
            let mut c = sink(Some(&in_dir(dir, "clusters.txt")?))?;
            h.write(&mut c)?;
            write_report(&mut c)?;
            c.flush()?;
        }
        None => {
            let mut out = sink(None)?;
            h.write(&mut out)?;
            pipeline::write_fits_csv(&mut out, &fits)?;
            writeln!(out)?;
            write_report(&mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sn_mple::estimation::PenaltySpec;

    #[test]
    fn numerical_failures_map_to_three() {
        let e = Error::Fold {
            fold: 2,
            source: Box::new(Error::NumericalFailure {
                message: "x".into(),
                trace: vec![],
            }),
        };
        assert_eq!(Failure::from(e).code, 3);
        assert_eq!(Failure::from(Error::InvalidInput("bad".into())).code, 2);
        assert_eq!(
            Failure::from(Error::Parse {
                line: 3,
                message: "x".into()
            })
            .code,
            2
        );
    }

    #[test]
    fn penalty_echo_for_fixed_method() {
        let est = EstimationArgs {
            method: crate::MethodArg::QMple,
            folds: 10,
            omega0: 0.05,
            grid_size: 40,
            penalty: PenaltySpec::Hyperbolic,
            tol: 1e-8,
            max_iter: 500,
        };
        let mut h = Header::new("fit");
        est.echo(&mut h);
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# lambda=0.875913\n"));
        assert!(text.contains("# c2=0.856250\n"));
    }
}
