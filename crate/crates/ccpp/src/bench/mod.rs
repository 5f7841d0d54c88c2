//! Experimental procedure: repeated trials that solve on training rows,
//! certify on calibration rows and measure coverage on test rows, plus the
//! bundled case studies, the analytic oracle for `case1` and output files.

mod output;
mod registry;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use output::{emit_outputs, histogram, trials_csv, Histogram, HIST_BINS};
pub use registry::{bundled, bundled_source, control_document, BUNDLED};

use crate::baselines::{encode_sa, encode_saa};
use crate::encode::{encode_joint_max, encode_joint_union, encode_kkt, encode_mip, DetProgram, EncodeError, Outer};
use crate::problem::{stream_rng, validate_sizes, CcoProblem, Distribution, ProblemInstance};
use crate::quantile::{certify, empirical_coverage, CertifyOptions, ConformalLevel, JointMode, QuantileError};
use crate::robust::delta_tilde;
use crate::solve::{solve, solve_quantile_penalty, Backend, Solution, SolveConfig, SolveError, Status};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Quantile(#[from] QuantileError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Solution method of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    CppMip,
    CppKkt,
    Penalty,
    Sa,
    Saa,
    RcppMip,
    RcppKkt,
    Union,
    Max,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::CppMip,
        Method::CppKkt,
        Method::Penalty,
        Method::Sa,
        Method::Saa,
        Method::RcppMip,
        Method::RcppKkt,
        Method::Union,
        Method::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CppMip => "cpp-mip",
            Method::CppKkt => "cpp-kkt",
            Method::Penalty => "penalty",
            Method::Sa => "sa",
            Method::Saa => "saa",
            Method::RcppMip => "rcpp-mip",
            Method::RcppKkt => "rcpp-kkt",
            Method::Union => "union",
            Method::Max => "max",
        }
    }

    /// True for the distributionally robust variants.
    pub fn robust(self) -> bool {
        matches!(self, Method::RcppMip | Method::RcppKkt)
    }

    /// Joint-constraint certification mode used with this method.
    pub fn joint_mode(self) -> JointMode {
        if self == Method::Union {
            JointMode::Union
        } else {
            JointMode::Max
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Method parameters shared by single solves and experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOptions {
    pub method: Method,
    /// Outer encoding of the joint methods.
    pub outer: Outer,
    /// Robust sub-levels for the union method.
    pub robust_union: bool,
    /// SAA violation fraction `ω`.
    pub omega: f64,
    /// SAA score margin `ι`.
    pub iota: f64,
    pub solve: SolveConfig,
}

impl MethodOptions {
    pub fn new(method: Method) -> Self {
        MethodOptions {
            method,
            outer: Outer::Mip,
            robust_union: false,
            omega: 0.05,
            iota: 0.0,
            solve: SolveConfig::default(),
        }
    }
}

/// Training level of the single-constraint and max methods.
pub fn training_level(p: &CcoProblem, count: usize, robust: bool) -> Result<ConformalLevel, BenchError> {
    Ok(if robust {
        ConformalLevel::robust(&delta_tilde(p.delta, count, &p.divergence()).map_err(QuantileError::from)?)?
    } else {
        ConformalLevel::new(p.delta, count)?
    })
}

/// Deterministic program of `opts.method` on `train`; `None` for the penalty
/// method, which solves the problem directly.
pub fn encode_method(p: &CcoProblem, train: &[Vec<f64>], opts: &MethodOptions) -> Result<Option<DetProgram>, BenchError> {
    let k = train.len();
    let prog = match opts.method {
        Method::CppMip | Method::RcppMip => encode_mip(p, train, &training_level(p, k, opts.method.robust())?)?,
        Method::CppKkt | Method::RcppKkt => {
            encode_kkt(p, train, training_level(p, k, opts.method.robust())?.alpha)?
        }
        Method::Penalty => return Ok(None),
        Method::Sa => encode_sa(p, train)?,
        Method::Saa => encode_saa(p, train, opts.omega, opts.iota)?,
        Method::Union => encode_joint_union(p, train, opts.outer, opts.robust_union)?,
        Method::Max => encode_joint_max(p, train, &training_level(p, k, false)?, opts.outer)?,
    };
    Ok(Some(prog))
}

/// Solves `p` on `train` with the configured method.
pub fn solve_method(p: &CcoProblem, train: &[Vec<f64>], opts: &MethodOptions) -> Result<Solution, BenchError> {
    if opts.method == Method::Penalty || opts.solve.backend == Backend::Penalty {
        if opts.method != Method::Penalty {
            return Err(BenchError::Config(format!(
                "the penalty backend cannot solve method {}",
                opts.method
            )));
        }
        let level = training_level(p, train.len(), false)?;
        return Ok(solve_quantile_penalty(p, train, &level, &opts.solve)?);
    }
    let prog = encode_method(p, train, opts)?.expect("encoded method");
    Ok(solve(&prog, &opts.solve)?)
}

/// Experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Number of trials `N`.
    pub trials: usize,
    /// Training rows `K`.
    pub k: usize,
    /// Calibration rows `L`.
    pub l: usize,
    /// Test rows `V`.
    pub v: usize,
    pub seed: u64,
    pub options: MethodOptions,
}

impl ExperimentConfig {
    pub fn validate(&self, p: &CcoProblem) -> Result<(), BenchError> {
        if self.trials == 0 || self.v == 0 {
            return Err(BenchError::Config("trials and test size must be positive".into()));
        }
        self.options.solve.validate()?;
        if self.options.method != Method::Sa && self.options.method != Method::Saa {
            let robust = self.options.method.robust();
            if let Err(v) = validate_sizes(p, self.k, self.l, robust) {
                let msg: Vec<String> = v
                    .iter()
                    .map(|s| match s.minimal {
                        Some(m) => format!("{} = {} is below the minimum {m}", s.set, s.given),
                        None => format!("{} = {}: no size satisfies the robust bound", s.set, s.given),
                    })
                    .collect();
                return Err(BenchError::Config(msg.join("; ")));
            }
        }
        Ok(())
    }
}

/// RNG stream purpose of training rows.
pub const TRAIN: u64 = 0;
/// RNG stream purpose of test rows.
pub const TEST: u64 = 1;
/// RNG stream purpose of calibration rows.
pub const CALIB: u64 = 2;

/// Stream index of `purpose` in `trial`.
pub fn trial_stream(trial: usize, purpose: u64) -> u64 {
    trial as u64 * 4 + purpose
}

/// `count` rows of `dist` from the `purpose` stream of `trial`.
pub fn draw_rows(dist: &Distribution, seed: u64, trial: usize, purpose: u64, count: usize) -> Vec<Vec<f64>> {
    dist.sample_rows(&mut stream_rng(seed, trial_stream(trial, purpose)), count)
}

/// Training, calibration and test rows of one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub train: Vec<Vec<f64>>,
    pub calib: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl TrialData {
    pub fn draw(inst: &ProblemInstance, cfg: &ExperimentConfig, trial: usize) -> TrialData {
        TrialData {
            train: draw_rows(&inst.distribution, cfg.seed, trial, TRAIN, cfg.k),
            calib: draw_rows(&inst.distribution, cfg.seed, trial, CALIB, cfg.l),
            test: draw_rows(inst.test_dist(), cfg.seed, trial, TEST, cfg.v),
        }
    }

    /// Hash of every row, for checking that methods share data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for set in [&self.train, &self.calib, &self.test] {
            set.len().hash(&mut h);
            for r in set {
                for v in r {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Outcome of one trial. Metrics are NaN when the solve returned no point
/// or failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub x: Vec<f64>,
    /// `J(x*)`.
    pub objective: f64,
    /// Solver status, or `error` when the trial failed before solving.
    pub status: String,
    /// Conformal bound `C(x*)`.
    pub bound: f64,
    /// Test coverage at threshold 0.
    pub ec0: f64,
    /// Test coverage at the conformal bound.
    pub ecc: f64,
    /// Seconds.
    pub wall_time: f64,
    pub nodes: u64,
    pub error: Option<String>,
}

impl TrialReport {
    pub fn has_point(&self) -> bool {
        !self.x.is_empty()
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

/// Aggregate over the trials with a solution point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub method: Method,
    pub trials: usize,
    pub k: usize,
    pub l: usize,
    pub v: usize,
    pub seed: u64,
    pub bound: Stat,
    pub objective: Stat,
    pub ec0: Stat,
    pub ecc: Stat,
    pub wall_time: Stat,
    pub optimal: usize,
    pub feasible: usize,
    pub timeouts: usize,
    pub infeasible: usize,
    pub errors: usize,
    /// Trials that produced a solution point (any status).
    pub with_point: usize,
}

impl Summary {
    pub fn of(p: &CcoProblem, cfg: &ExperimentConfig, reports: &[TrialReport]) -> Summary {
        let col = |f: fn(&TrialReport) -> f64| -> Vec<f64> {
            reports.iter().filter(|r| r.has_point()).map(f).collect()
        };
        let count = |s: &str| reports.iter().filter(|r| r.status == s).count();
        Summary {
            problem: p.name.clone(),
            method: cfg.options.method,
            trials: reports.len(),
            k: cfg.k,
            l: cfg.l,
            v: cfg.v,
            seed: cfg.seed,
            bound: Stat::of(&col(|r| r.bound)),
            objective: Stat::of(&col(|r| r.objective)),
            ec0: Stat::of(&col(|r| r.ec0)),
            ecc: Stat::of(&col(|r| r.ecc)),
            wall_time: Stat::of(&reports.iter().map(|r| r.wall_time).collect::<Vec<_>>()),
            optimal: count(Status::Optimal.as_str()),
            feasible: count(Status::Feasible.as_str()),
            timeouts: count(Status::Timeout.as_str()),
            infeasible: count(Status::Infeasible.as_str()),
            errors: count("error"),
            with_point: reports.iter().filter(|r| r.has_point()).count(),
        }
    }
}

/// Runs trial `trial`.
pub fn run_trial(inst: &ProblemInstance, cfg: &ExperimentConfig, trial: usize) -> TrialReport {
    let p = &inst.problem;
    let data = TrialData::draw(inst, cfg, trial);
    let mut rep = TrialReport {
        trial,
        x: Vec::new(),
        objective: f64::NAN,
        status: "error".into(),
        bound: f64::NAN,
        ec0: f64::NAN,
        ecc: f64::NAN,
        wall_time: 0.0,
        nodes: 0,
        error: None,
    };
    let sol = match solve_method(p, &data.train, &cfg.options) {
        Ok(s) => s,
        Err(e) => {
            rep.error = Some(e.to_string());
            return rep;
        }
    };
    rep.status = sol.status.as_str().into();
    rep.wall_time = sol.wall_time;
    rep.nodes = sol.nodes;
    // Penalty points that miss the quantile constraint are not solutions.
    if !sol.has_point() || (cfg.options.method == Method::Penalty && sol.status != Status::Feasible) {
        return rep;
    }
    let opts = CertifyOptions {
        robust: cfg.options.method.robust(),
        joint: cfg.options.method.joint_mode(),
    };
    match certify(&sol.x, p, &data.calib, opts) {
        Ok(c) => rep.bound = c.bound,
        Err(e) => rep.error = Some(e.to_string()),
    }
    rep.objective = sol.objective;
    rep.ec0 = empirical_coverage(&sol.x, p, &data.test, 0.0);
    rep.ecc = if rep.bound.is_finite() {
        empirical_coverage(&sol.x, p, &data.test, rep.bound)
    } else {
        f64::NAN
    };
    rep.x = sol.x;
    rep
}

/// Runs every trial on the current rayon pool; reports are ordered by trial.
pub fn run_experiment(inst: &ProblemInstance, cfg: &ExperimentConfig) -> Result<(Vec<TrialReport>, Summary), BenchError> {
    cfg.validate(&inst.problem)?;
    let reports: Vec<TrialReport> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(inst, cfg, t))
        .collect();
    let summary = Summary::of(&inst.problem, cfg, &reports);
    Ok((reports, summary))
}

/// Population optimum `(x*, J*)` of `case1`: the chance constraint
/// `50·Y·eˣ − 5 ≤ 0` with `Y` exponential of mean 3 holds with probability
/// `1 − δ` iff `x ≤ −ln(30·ln(1/δ))`. The objective `x³eˣ` decreases up to
/// `x = −3`, and `x³ + 20 ≤ 0` means `x ≤ −20^{1/3}`; the box is `[−10, −2.72]`.
pub fn analytic_oracle_case1(delta: f64) -> Result<(f64, f64), BenchError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BenchError::Config(format!("delta {delta} outside (0, 1)")));
    }
    let cap = -(30.0 * (1.0 / delta).ln()).ln();
    let upper = cap.min(-(20f64.cbrt())).min(-2.72);
    let x = upper.min(-3.0).max(-10.0);
    if x > upper {
        return Err(BenchError::Config(format!("no feasible point for delta {delta}")));
    }
    Ok((x, x.powi(3) * x.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_values() {
        let (x, j) = analytic_oracle_case1(0.05).unwrap();
        assert!((x + 4.4983).abs() < 1e-4 && (j + 1.0127).abs() < 1e-3, "{x} {j}");
        // Smaller δ pushes the optimum further left.
        let (x2, _) = analytic_oracle_case1(0.01).unwrap();
        assert!(x2 < x);
        // Large δ: the quantile cap leaves the unconstrained minimizer −3.
        let (x3, j3) = analytic_oracle_case1(0.7).unwrap();
        assert_eq!(x3, -3.0);
        assert!((j3 + 27.0 * (-3f64).exp()).abs() < 1e-12);
        assert!(analytic_oracle_case1(1.5).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("cpp".parse::<Method>().is_err());
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0, f64::NAN]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert!(Stat::of(&[]).mean.is_nan());
    }
}
