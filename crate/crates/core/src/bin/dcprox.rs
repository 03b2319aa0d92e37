use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use dcprox::harness::{run_bench, run_record, write_bench_csv, write_trace_csv, ExperimentSpec, Method, RegKind};
use dcprox::instance::{generate_instance, ProblemInstance, DEFAULT_NOISE};
use dcprox::{DcError, DcProblem, LeastSquaresSmooth, OuterConfig, Result};

#[derive(Parser)]
#[command(name = "dcprox", version, about = "DC composite optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random sparse regression instance.
    Gen(GenArgs),
    /// Solve one instance from the zero vector and print a JSON record.
    Solve(SolveArgs),
    /// Run a batch described by a JSON experiment spec.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NOISE)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long, value_parser = parse_reg, default_value = "l1-l2")]
    reg: RegKind,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    log_eps: f64,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Scale label copied into the record.
    #[arg(long, default_value_t = 1)]
    l: u32,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the JSON record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: DcError| e.to_string())
}

fn parse_reg(s: &str) -> std::result::Result<RegKind, String> {
    s.parse().map_err(|e: DcError| e.to_string())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let inst = generate_instance(args.m, args.n, args.p, args.noise, args.seed)?;
    inst.save(&args.out)?;
    println!("{}", inst.digest());
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let inst = ProblemInstance::load(&args.instance)?;
    let reg = args.reg.build(args.lambda, args.log_eps)?;
    let smooth = LeastSquaresSmooth::new(inst.a.clone(), inst.b.clone())?;
    let prob = DcProblem::new(Arc::new(smooth), reg);
    let mut cfg = OuterConfig::default();
    if let Some(theta) = args.theta {
        cfg.inner.theta = theta;
    }
    if let Some(tol) = args.tol {
        cfg.eps = tol;
    }
    if let Some(max_iter) = args.max_iter {
        cfg.max_outer = max_iter;
    }
    cfg.validate()?;
    let (rec, trace) = run_record(args.method, &inst, &prob, args.l, &cfg);
    let Some(trace) = trace else {
        return Err(DcError::InvalidParameter(format!(
            "{} failed on {}",
            args.method.as_str(),
            args.instance.display()
        )));
    };
    let json = serde_json::to_string(&rec).map_err(|e| DcError::Format(e.to_string()))?;
    println!("{json}");
    if let Some(path) = &args.out {
        std::fs::write(path, format!("{json}\n"))?;
    }
    if let Some(path) = &args.trace {
        write_trace_csv(BufWriter::new(File::create(path)?), &trace)?;
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)?;
    let spec: ExperimentSpec =
        serde_json::from_str(&text).map_err(|e| DcError::InvalidParameter(format!("spec: {e}")))?;
    let threads = std::env::var("DCPROX_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let records = run_bench(&spec, threads)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    write_bench_csv(&mut out, &records)?;
    out.flush()?;
    let ok = records.iter().filter(|r| r.status == "Converged").count();
    eprintln!("{} runs, {} converged, written to {}", records.len(), ok, args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
