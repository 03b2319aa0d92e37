//! Batch experiments and result serialization.
//!
//! A bench run expands an [`ExperimentSpec`] into every
//! (method, scale, λ, seed) job, solves them from `x0 = 0` and emits one
//! [`ResultRecord`] per job. The CSV writer appends one summary row per
//! (method, scale, λ) cell holding medians over `Converged` rows.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{pdca_solve, pdcae_solve};
use crate::error::{DcError, Result};
use crate::instance::{generate_instance, ProblemInstance, DEFAULT_NOISE};
use crate::problem::{DcProblem, LeastSquaresSmooth, Regularizer};
use crate::solver::{criticality_residual, solve, OuterConfig, RunTrace};

/// Base dimensions of one scale step, `(m, n, p) = l·(720, 2560, 80)`.
pub const BASE_DIMS: (usize, usize, usize) = (720, 2560, 80);

pub const CSV_HEADER: [&str; 13] = [
    "method",
    "l",
    "m",
    "n",
    "p",
    "lambda",
    "seed",
    "status",
    "outer_iters",
    "total_inner_iters",
    "f_final",
    "criticality",
    "wall_time_ms",
];

pub const CSV_COMMENT: &str =
    "# summary rows (seed=median, status=summary) hold medians over Converged rows only";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mbfgs-snewton")]
    MbfgsSnewton,
    #[serde(rename = "pdca")]
    Pdca,
    #[serde(rename = "pdcae")]
    Pdcae,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MbfgsSnewton, Method::Pdca, Method::Pdcae];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MbfgsSnewton => "mbfgs-snewton",
            Self::Pdca => "pdca",
            Self::Pdcae => "pdcae",
        }
    }
}

impl FromStr for Method {
    type Err = DcError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DcError::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegKind {
    #[serde(rename = "l1-l2")]
    L1MinusL2,
    #[serde(rename = "log-sum")]
    LogSum,
}

impl RegKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::L1MinusL2 => "l1-l2",
            Self::LogSum => "log-sum",
        }
    }

    pub fn build(&self, lambda: f64, log_eps: f64) -> Result<Regularizer> {
        match self {
            Self::L1MinusL2 => Regularizer::l1_minus_l2(lambda),
            Self::LogSum => Regularizer::log_sum(lambda, log_eps),
        }
    }
}

impl FromStr for RegKind {
    type Err = DcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1-l2" => Ok(Self::L1MinusL2),
            "log-sum" => Ok(Self::LogSum),
            _ => Err(DcError::InvalidParameter(format!("unknown regularizer '{s}'"))),
        }
    }
}

pub fn run_method(
    method: Method,
    prob: &DcProblem,
    x0: &DVector<f64>,
    cfg: &OuterConfig,
) -> Result<(DVector<f64>, RunTrace)> {
    match method {
        Method::MbfgsSnewton => solve(prob, x0, cfg),
        Method::Pdca => pdca_solve(prob, x0, cfg),
        Method::Pdcae => pdcae_solve(prob, x0, cfg),
    }
}

/// One solver run. Field order is the JSON key order and the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub l: u32,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub seed: u64,
    pub status: String,
    pub outer_iters: usize,
    pub total_inner_iters: usize,
    pub f_final: f64,
    pub criticality: f64,
    pub wall_time_ms: f64,
}

impl ResultRecord {
    /// Same record with the timing field cleared, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_ms: 0.0,
            ..self.clone()
        }
    }

    fn csv_fields(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.l.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.lambda.to_string(),
            self.seed.to_string(),
            self.status.clone(),
            self.outer_iters.to_string(),
            self.total_inner_iters.to_string(),
            self.f_final.to_string(),
            self.criticality.to_string(),
            self.wall_time_ms.to_string(),
        ]
    }
}

/// Solves `inst` with `method` from the zero vector and packages the outcome.
///
/// Runtime errors become a record with status `Error`.
pub fn run_record(
    method: Method,
    inst: &ProblemInstance,
    prob: &DcProblem,
    l: u32,
    cfg: &OuterConfig,
) -> (ResultRecord, Option<RunTrace>) {
    let x0 = DVector::zeros(prob.dim());
    let start = Instant::now();
    let outcome = run_method(method, prob, &x0, cfg);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut rec = ResultRecord {
        method: method.as_str().to_string(),
        l,
        m: inst.m,
        n: inst.n,
        p: inst.p,
        lambda: prob.reg.lambda(),
        seed: inst.seed,
        status: "Error".to_string(),
        outer_iters: 0,
        total_inner_iters: 0,
        f_final: f64::NAN,
        criticality: f64::NAN,
        wall_time_ms,
    };
    match outcome {
        Ok((x, trace)) => {
            rec.status = trace.status.as_str().to_string();
            rec.outer_iters = trace.outer_iters();
            rec.total_inner_iters = trace.total_inner_iters;
            rec.f_final = trace.f_final();
            rec.criticality = criticality_residual(prob, &x).unwrap_or(f64::NAN);
            (rec, Some(trace))
        }
        Err(_) => (rec, None),
    }
}

fn default_shrink() -> usize {
    1
}
fn default_seeds() -> usize {
    20
}
fn default_base_seed() -> u64 {
    1
}
fn default_log_eps() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    DEFAULT_NOISE
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Batch description, read from JSON.
///
/// Instance seeds are `base_seed + i` for `i < seeds_per_cell`; the same
/// instance is shared by every method and λ at a given scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scales: Vec<u32>,
    #[serde(default = "default_shrink")]
    pub shrink: usize,
    pub lambdas: Vec<f64>,
    pub regularizer: RegKind,
    #[serde(default = "default_log_eps")]
    pub log_eps: f64,
    #[serde(default = "default_seeds")]
    pub seeds_per_cell: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_outer: Option<usize>,
    #[serde(default)]
    pub theta: Option<f64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.lambdas.is_empty() || self.methods.is_empty() {
            return Err(DcError::InvalidParameter(
                "scales, lambdas and methods must be non-empty".into(),
            ));
        }
        if self.shrink < 1 || self.seeds_per_cell < 1 || self.scales.contains(&0) {
            return Err(DcError::InvalidParameter(
                "shrink, seeds_per_cell and every scale must be at least 1".into(),
            ));
        }
        for &l in &self.scales {
            let (m, n, p) = self.dims(l);
            if m == 0 || n == 0 || p == 0 {
                return Err(DcError::InvalidParameter(format!(
                    "scale {l} with shrink {} gives empty dimensions",
                    self.shrink
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self, l: u32) -> (usize, usize, usize) {
        let (m, n, p) = BASE_DIMS;
        let l = l as usize;
        (m * l / self.shrink, n * l / self.shrink, p * l / self.shrink)
    }

    pub fn outer_config(&self) -> OuterConfig {
        let mut cfg = OuterConfig::default();
        if let Some(tol) = self.tol {
            cfg.eps = tol;
        }
        if let Some(max_outer) = self.max_outer {
            cfg.max_outer = max_outer;
        }
        if let Some(theta) = self.theta {
            cfg.inner.theta = theta;
        }
        cfg
    }
}

/// Runs every job of `spec` on `threads` workers and returns the records
/// sorted by (method, l, λ, seed).
pub fn run_bench(spec: &ExperimentSpec, threads: usize) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    let cfg = spec.outer_config();
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| DcError::InvalidParameter(format!("thread pool: {e}")))?;

    pool.install(|| {
        let cells: Vec<(u32, u64)> = spec
            .scales
            .iter()
            .flat_map(|&l| (0..spec.seeds_per_cell as u64).map(move |i| (l, spec.base_seed + i)))
            .collect();
        let instances: Vec<(u32, ProblemInstance, Arc<LeastSquaresSmooth>)> = cells
            .par_iter()
            .map(|&(l, seed)| {
                let (m, n, p) = spec.dims(l);
                let inst = generate_instance(m, n, p, spec.noise, seed)?;
                let smooth = LeastSquaresSmooth::new(inst.a.clone(), inst.b.clone())?;
                Ok((l, inst, Arc::new(smooth)))
            })
            .collect::<Result<_>>()?;

        let mut jobs = Vec::new();
        for (idx, (_, inst, _)) in instances.iter().enumerate() {
            for &lambda in &spec.lambdas {
                spec.regularizer.build(lambda, spec.log_eps)?;
                for &method in &spec.methods {
                    jobs.push((idx, lambda, method, inst.seed));
                }
            }
        }

        let mut records: Vec<ResultRecord> = jobs
            .par_iter()
            .map(|&(idx, lambda, method, _)| {
                let (l, inst, smooth) = &instances[idx];
                let reg = spec
                    .regularizer
                    .build(lambda, spec.log_eps)
                    .expect("validated above");
                let prob = DcProblem::new(Arc::clone(smooth), reg);
                run_record(method, inst, &prob, *l, &cfg).0
            })
            .collect();
        sort_records(&mut records);
        Ok(records)
    })
}

pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.l.cmp(&b.l))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.seed.cmp(&b.seed))
    });
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Per-cell medians over converged rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: String,
    pub l: u32,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub converged: usize,
    pub outer_iters: f64,
    pub total_inner_iters: f64,
    pub f_final: f64,
    pub criticality: f64,
    pub wall_time_ms: f64,
}

/// One summary per (method, l, λ), in the order the cells first appear in
/// `records` (sorted input gives sorted output).
pub fn summarize(records: &[ResultRecord]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let head = &records[start];
        let end = records[start..]
            .iter()
            .position(|r| r.method != head.method || r.l != head.l || r.lambda != head.lambda)
            .map_or(records.len(), |k| start + k);
        let conv: Vec<&ResultRecord> = records[start..end]
            .iter()
            .filter(|r| r.status == "Converged")
            .collect();
        let col = |f: fn(&ResultRecord) -> f64| median(&mut conv.iter().map(|r| f(r)).collect::<Vec<_>>());
        out.push(CellSummary {
            method: head.method.clone(),
            l: head.l,
            m: head.m,
            n: head.n,
            p: head.p,
            lambda: head.lambda,
            converged: conv.len(),
            outer_iters: col(|r| r.outer_iters as f64),
            total_inner_iters: col(|r| r.total_inner_iters as f64),
            f_final: col(|r| r.f_final),
            criticality: col(|r| r.criticality),
            wall_time_ms: col(|r| r.wall_time_ms),
        });
        start = end;
    }
    out
}

/// Writes the comment line, header, sorted data rows and summary rows.
pub fn write_bench_csv<W: Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = out;
    writeln!(out, "{CSV_COMMENT}")?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DcError::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &sorted {
        w.write_record(r.csv_fields()).map_err(csv_err)?;
    }
    for s in summarize(&sorted) {
        w.write_record([
            s.method.clone(),
            s.l.to_string(),
            s.m.to_string(),
            s.n.to_string(),
            s.p.to_string(),
            s.lambda.to_string(),
            "median".to_string(),
            "summary".to_string(),
            s.outer_iters.to_string(),
            s.total_inner_iters.to_string(),
            s.f_final.to_string(),
            s.criticality.to_string(),
            s.wall_time_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iteration trace columns `k, f, d_norm, eta, inner_iters`.
pub fn write_trace_csv<W: Write>(out: W, trace: &RunTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DcError::Io(std::io::Error::other(e));
    w.write_record(["k", "f", "d_norm", "eta", "inner_iters"])
        .map_err(csv_err)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            r.f.to_string(),
            r.d_norm.to_string(),
            r.eta.to_string(),
            r.inner_iters.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(methods: Vec<Method>, seeds: usize) -> ExperimentSpec {
        ExperimentSpec {
            scales: vec![1],
            shrink: 20,
            lambdas: vec![0.01],
            regularizer: RegKind::L1MinusL2,
            log_eps: 0.5,
            seeds_per_cell: seeds,
            base_seed: 1,
            methods,
            noise: 0.01,
            tol: None,
            max_outer: None,
            theta: None,
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nmapg".parse::<Method>().is_err());
        assert_eq!("log-sum".parse::<RegKind>().unwrap(), RegKind::LogSum);
    }

    #[test]
    fn spec_defaults_and_dims() {
        let spec: ExperimentSpec = serde_json::from_str(
            r#"{"scales":[1,2],"shrink":10,"lambdas":[0.01],"regularizer":"log-sum"}"#,
        )
        .unwrap();
        assert_eq!(spec.seeds_per_cell, 20);
        assert_eq!(spec.methods, Method::ALL.to_vec());
        assert_eq!(spec.dims(1), (72, 256, 8));
        assert_eq!(spec.dims(2), (144, 512, 16));
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"scales":[],"lambdas":[1],"regularizer":"l1-l2","bogus":1}"#).is_err());
        let empty: ExperimentSpec =
            serde_json::from_str(r#"{"scales":[],"lambdas":[1],"regularizer":"l1-l2"}"#).unwrap();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn bench_row_arithmetic() {
        let spec = tiny_spec(vec![Method::Pdca, Method::MbfgsSnewton], 2);
        let recs = run_bench(&spec, 2).unwrap();
        assert_eq!(recs.len(), 4);
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with('#'));
        assert_eq!(lines[1], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 2 + 4 + 2);
        assert_eq!(lines.iter().filter(|l| l.contains(",median,summary,")).count(), 2);
        assert!(lines[2].starts_with("mbfgs-snewton,"));
    }

    #[test]
    fn bench_is_deterministic() {
        let spec = tiny_spec(Method::ALL.to_vec(), 2);
        let a: Vec<_> = run_bench(&spec, 3).unwrap().iter().map(|r| r.without_timing()).collect();
        let b: Vec<_> = run_bench(&spec, 1).unwrap().iter().map(|r| r.without_timing()).collect();
        assert_eq!(a, b);
    }
}
