//! Command-line front end: solve, certify, run experiments, compare methods
//! and dump encoded programs. JSON goes to stdout, tables and logs to stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ccpp::bench::{
    bundled_source, draw_rows, emit_outputs, encode_method, run_experiment, solve_method, ExperimentConfig, Method,
    MethodOptions, Summary, TrialData, CALIB, TEST, TRAIN,
};
use ccpp::encode::Outer;
use ccpp::problem::{load_problem, load_problem_str, ProblemInstance};
use ccpp::quantile::{certify, empirical_coverage, CertifyOptions, JointMode};
use ccpp::robust::DivergenceKind;
use ccpp::solve::{Backend, SolveConfig, Status};

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_INPUT: u8 = 4;

#[derive(Parser)]
#[command(name = "ccpp", version, about = "Conformal predictive programming for chance-constrained optimization")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Per-solve time limit in seconds.
    #[arg(long, global = true, default_value_t = 100.0)]
    time_limit: f64,
    /// Worker threads for experiments (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory for experiment files.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Node logs and data fingerprints on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance on fresh training rows.
    Solve(SolveArgs),
    /// Certify a given decision on fresh calibration rows.
    Certify(CertifyArgs),
    /// Run repeated trials and write trial tables and histograms.
    Experiment(ExperimentArgs),
    /// Run several methods on identical per-trial data.
    Compare(CompareArgs),
    /// Print the encoded deterministic program as JSON.
    EmitIr(EmitArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem file, or the name of a bundled problem (case1, control,
    /// portfolio, jcco).
    problem: String,
    /// Override the failure probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the distribution-shift radius.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the divergence.
    #[arg(long, value_parser = parse_divergence)]
    divergence: Option<DivergenceKind>,
}

#[derive(Args, Clone)]
struct MethodArgs {
    #[arg(long, default_value = "cpp-mip")]
    method: String,
    /// Outer encoding of the union and max methods.
    #[arg(long, default_value = "mip", value_parser = parse_outer)]
    outer: Outer,
    /// Robust sub-levels for the union method.
    #[arg(long)]
    robust_union: bool,
    #[arg(long, default_value_t = 0.05)]
    omega: f64,
    #[arg(long, default_value_t = 0.0)]
    iota: f64,
    #[arg(long, default_value = "bnb")]
    backend: String,
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    #[arg(long, default_value_t = 20)]
    multistart: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Training rows (default from the problem file).
    #[arg(long)]
    k: Option<usize>,
    /// Certify on fresh calibration rows.
    #[arg(long)]
    certify: bool,
    /// Calibration rows.
    #[arg(long)]
    l: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Decision vector, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    x: Vec<f64>,
    #[arg(long)]
    l: Option<usize>,
    /// Test rows for empirical coverage (0 disables).
    #[arg(long, default_value_t = 0)]
    v: usize,
    #[arg(long)]
    robust: bool,
    #[arg(long, default_value = "union", value_parser = parse_joint)]
    joint: JointMode,
}

#[derive(Args, Clone)]
struct SizeArgs {
    /// Trials (default from the problem file).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    v: Option<usize>,
    /// Use the trial count of the original study.
    #[arg(long)]
    paper_scale: bool,
    /// Also write SVG histograms.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    sizes: SizeArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    sizes: SizeArgs,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    k: Option<usize>,
}

fn parse_divergence(s: &str) -> Result<DivergenceKind, String> {
    match s {
        "kl" => Ok(DivergenceKind::Kl),
        "tv" => Ok(DivergenceKind::Tv),
        _ => Err(format!("unknown divergence `{s}` (kl or tv)")),
    }
}

fn parse_outer(s: &str) -> Result<Outer, String> {
    match s {
        "mip" => Ok(Outer::Mip),
        "kkt" => Ok(Outer::Kkt),
        _ => Err(format!("unknown outer encoding `{s}` (mip or kkt)")),
    }
}

fn parse_joint(s: &str) -> Result<JointMode, String> {
    match s {
        "union" => Ok(JointMode::Union),
        "max" => Ok(JointMode::Max),
        _ => Err(format!("unknown joint mode `{s}` (union or max)")),
    }
}

/// Loads a problem file, falling back to the bundled problems when no such
/// file exists.
fn load(args: &ProblemArgs) -> Result<ProblemInstance> {
    let path = Path::new(&args.problem);
    let mut inst = if path.exists() {
        load_problem(path)?
    } else if let Some(src) = bundled_source(&args.problem) {
        load_problem_str(src)?
    } else {
        bail!("problem file `{}` not found", args.problem);
    };
    let p = &mut inst.problem;
    if let Some(d) = args.delta {
        p.delta = d;
    }
    if let Some(e) = args.epsilon {
        p.epsilon = Some(e);
    }
    if let Some(k) = args.divergence {
        p.divergence_kind = k;
    }
    p.validate()?;
    Ok(inst)
}

fn options(cli: &Cli, m: &MethodArgs, method: &str) -> Result<MethodOptions> {
    let method: Method = method.parse().map_err(|e: String| anyhow!(e))?;
    let backend: Backend = m.backend.parse().map_err(|e: String| anyhow!(e))?;
    let solve = SolveConfig {
        time_limit: cli.time_limit,
        abs_gap: m.gap,
        multistart: m.multistart,
        backend,
        verbose: cli.verbose,
        ..SolveConfig::default()
    };
    solve.validate()?;
    Ok(MethodOptions {
        method,
        outer: m.outer,
        robust_union: m.robust_union,
        omega: m.omega,
        iota: m.iota,
        solve,
    })
}

fn size(flag: Option<usize>, default: Option<usize>, fallback: usize) -> usize {
    flag.or(default).unwrap_or(fallback)
}

fn status_code(s: Status) -> u8 {
    match s {
        Status::Optimal | Status::Feasible => 0,
        Status::Infeasible => EXIT_INFEASIBLE,
        Status::Timeout => EXIT_TIMEOUT,
    }
}

/// Writes pretty JSON to stdout; a closed pipe is not an error.
fn print_json(v: &serde_json::Value) {
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn cmd_solve(cli: &Cli, a: &SolveArgs) -> Result<u8> {
    let inst = load(&a.problem)?;
    let p = &inst.problem;
    let opts = options(cli, &a.method, &a.method.method)?;
    let k = size(a.k, inst.defaults.k, 100);
    let train = draw_rows(&inst.distribution, cli.seed, 0, TRAIN, k);
    let sol = solve_method(p, &train, &opts)?;
    let mut out = json!({
        "problem": p.name,
        "method": opts.method,
        "k": k,
        "seed": cli.seed,
        "status": sol.status,
        "x": sol.x,
        "objective": sol.objective,
        "nodes": sol.nodes,
        "wall_time": sol.wall_time,
        "max_violation": sol.max_violation,
    });
    if a.certify && sol.has_point() {
        let l = size(a.l, inst.defaults.l, 1000);
        let calib = draw_rows(&inst.distribution, cli.seed, 0, CALIB, l);
        let c = certify(
            &sol.x,
            p,
            &calib,
            CertifyOptions {
                robust: opts.method.robust(),
                joint: opts.method.joint_mode(),
            },
        )?;
        out["certificate"] = certificate_json(&c)?;
    }
    print_json(&out);
    Ok(status_code(sol.status))
}

/// Certificate without the per-row calibration scores.
fn certificate_json(c: &ccpp::quantile::Certificate) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(c)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("scores");
    }
    Ok(v)
}

fn cmd_certify(cli: &Cli, a: &CertifyArgs) -> Result<u8> {
    let inst = load(&a.problem)?;
    let p = &inst.problem;
    if a.x.len() != p.n {
        bail!("--x has {} entries, the problem has n = {}", a.x.len(), p.n);
    }
    let l = size(a.l, inst.defaults.l, 1000);
    let calib = draw_rows(&inst.distribution, cli.seed, 0, CALIB, l);
    let c = certify(&a.x, p, &calib, CertifyOptions { robust: a.robust, joint: a.joint })?;
    let mut out = json!({ "problem": p.name, "x": a.x, "certificate": certificate_json(&c)? });
    if a.v > 0 {
        let test = draw_rows(inst.test_dist(), cli.seed, 0, TEST, a.v);
        out["ec0"] = json!(empirical_coverage(&a.x, p, &test, 0.0));
        out["ecc"] = json!(empirical_coverage(&a.x, p, &test, c.bound));
    }
    print_json(&out);
    Ok(0)
}

fn experiment_config(cli: &Cli, inst: &ProblemInstance, s: &SizeArgs, options: MethodOptions) -> ExperimentConfig {
    let d = inst.defaults;
    let trials = if s.paper_scale {
        d.paper_n.or(s.n).or(d.n).unwrap_or(300)
    } else {
        size(s.n, d.n, 50)
    };
    ExperimentConfig {
        trials,
        k: size(s.k, d.k, 100),
        l: size(s.l, d.l, 200),
        v: size(s.v, d.v, 1000),
        seed: cli.seed,
        options,
    }
}

fn print_summary_table(rows: &[Summary]) {
    eprintln!(
        "{:<10} {:>6} {:>12} {:>12} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "method", "trials", "mean C", "mean J", "EC0", "EC_C", "time", "timeout", "infeas"
    );
    for s in rows {
        eprintln!(
            "{:<10} {:>6} {:>12.5} {:>12.5} {:>8.4} {:>8.4} {:>8.3} {:>8} {:>6}",
            s.method.name(),
            s.trials,
            s.bound.mean,
            s.objective.mean,
            s.ec0.mean,
            s.ecc.mean,
            s.wall_time.mean,
            s.timeouts,
            s.infeasible
        );
    }
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs) -> Result<u8> {
    let inst = load(&a.problem)?;
    let cfg = experiment_config(cli, &inst, &a.sizes, options(cli, &a.method, &a.method.method)?);
    let (reports, summary) = run_experiment(&inst, &cfg)?;
    let dir = &cli.output_dir;
    emit_outputs(&reports, &summary, dir, a.sizes.svg)?;
    print_summary_table(std::slice::from_ref(&summary));
    print_json(&json!({ "output_dir": dir, "summary": summary }));
    Ok(0)
}

fn cmd_compare(cli: &Cli, a: &CompareArgs) -> Result<u8> {
    let inst = load(&a.problem)?;
    let mut summaries = Vec::new();
    for name in &a.methods {
        let cfg = experiment_config(cli, &inst, &a.sizes, options(cli, &a.method, name)?);
        if cli.verbose {
            for t in 0..cfg.trials {
                eprintln!("{name} trial {t}: data {:016x}", TrialData::draw(&inst, &cfg, t).fingerprint());
            }
        }
        let (reports, summary) = run_experiment(&inst, &cfg)?;
        emit_outputs(&reports, &summary, &cli.output_dir.join(name), a.sizes.svg)?;
        summaries.push(summary);
    }
    print_summary_table(&summaries);
    print_json(&json!({ "summaries": summaries }));
    Ok(0)
}

fn cmd_emit(cli: &Cli, a: &EmitArgs) -> Result<u8> {
    let inst = load(&a.problem)?;
    let opts = options(cli, &a.method, &a.method.method)?;
    let k = size(a.k, inst.defaults.k, 100);
    let train = draw_rows(&inst.distribution, cli.seed, 0, TRAIN, k);
    let prog = encode_method(&inst.problem, &train, &opts)?
        .ok_or_else(|| anyhow!("method {} has no deterministic program", opts.method))?;
    print_json(&serde_json::to_value(&prog)?);
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.cmd {
        Cmd::Solve(a) => cmd_solve(cli, a),
        Cmd::Certify(a) => cmd_certify(cli, a),
        Cmd::Experiment(a) => cmd_experiment(cli, a),
        Cmd::Compare(a) => cmd_compare(cli, a),
        Cmd::EmitIr(a) => cmd_emit(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
