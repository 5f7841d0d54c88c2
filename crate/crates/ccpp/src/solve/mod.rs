//! Solvers for deterministic programs: best-first branch-and-bound, exhaustive
//! enumeration for tiny instances, a continuous local solver, and a direct
//! quantile-penalty heuristic on the original problem.

mod bnb;
mod enumerate;
mod func;
mod lp;
mod nlp;
mod penalty;

use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bnb::solve_bnb;
pub use enumerate::{solve_enumerate, MAX_ENUMERATED};
pub use penalty::solve_quantile_penalty;

use crate::encode::{Constraint, DetProgram, Relation};
use crate::expr::{Expr, ExprError, Interval};
use func::{Func, Nlp, Row};
use nlp::{halton, solve_nlp, FEAS_TOL};

/// Violation tolerance of the independent re-verification.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("program has {0} enumerated decisions; the limit is {MAX_ENUMERATED}")]
    TooManyBinaries(usize),
    #[error("every start diverged")]
    Diverged,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("malformed program: {0}")]
    Program(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Bnb,
    Enumerate,
    Penalty,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bnb" => Ok(Backend::Bnb),
            "enumerate" => Ok(Backend::Enumerate),
            "penalty" => Ok(Backend::Penalty),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Seconds.
    pub time_limit: f64,
    pub abs_gap: f64,
    pub multistart: usize,
    pub penalty_mu0: f64,
    pub penalty_growth: f64,
    /// Number of penalty escalations.
    pub penalty_steps: usize,
    pub node_limit: u64,
    pub backend: Backend,
    /// Node log on stderr.
    pub verbose: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            time_limit: 100.0,
            abs_gap: 1e-6,
            multistart: 20,
            penalty_mu0: 10.0,
            penalty_growth: 10.0,
            penalty_steps: 12,
            node_limit: 2_000_000,
            backend: Backend::Bnb,
            verbose: false,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.into()));
        if !(self.time_limit > 0.0) {
            return bad("time limit must be positive");
        }
        if !(self.abs_gap >= 0.0) {
            return bad("gap must be nonnegative");
        }
        if self.multistart == 0 || self.node_limit == 0 || self.penalty_steps == 0 {
            return bad("multistart, node limit and penalty steps must be positive");
        }
        if !(self.penalty_mu0 > 0.0) {
            return bad("initial penalty must be positive");
        }
        if !(self.penalty_growth > 1.0) {
            return bad("penalty growth factor must exceed 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Feasible,
    Infeasible,
    Timeout,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Feasible => "feasible",
            Status::Infeasible => "infeasible",
            Status::Timeout => "timeout",
        }
    }
}

/// Solver result. `x` holds the decision variables; `full` every program
/// variable (equal to `x` for the penalty backend).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub full: Vec<f64>,
    /// Objective in the problem's own sense; NaN without a point.
    pub objective: f64,
    /// Values of the binary variables in declaration order.
    pub binaries: Vec<u8>,
    pub nodes: u64,
    /// Seconds.
    pub wall_time: f64,
    /// Largest constraint violation at the returned point.
    pub max_violation: f64,
}

impl Solution {
    pub fn has_point(&self) -> bool {
        !self.x.is_empty()
    }

    pub(crate) fn empty(status: Status, nodes: u64, start: Instant) -> Solution {
        Solution {
            status,
            x: Vec::new(),
            full: Vec::new(),
            objective: f64::NAN,
            binaries: Vec::new(),
            nodes,
            wall_time: start.elapsed().as_secs_f64(),
            max_violation: f64::NAN,
        }
    }

    /// Solution at `full` after independent verification against `prog`;
    /// `None` when verification fails.
    pub(crate) fn verified(
        prog: &DetProgram,
        full: Vec<f64>,
        status: Status,
        nodes: u64,
        start: Instant,
    ) -> Option<Solution> {
        let ver = prog.verify(&full);
        if !(ver.max_violation <= VERIFY_TOL) {
            return None;
        }
        let objective = prog.objective.eval_xy(&full, &[]).ok()?;
        Some(Solution {
            status,
            x: full[..prog.meta.decision_dim].to_vec(),
            binaries: prog.binaries().iter().map(|&b| full[b].round() as u8).collect(),
            full,
            objective,
            nodes,
            wall_time: start.elapsed().as_secs_f64(),
            max_violation: ver.max_violation,
        })
    }
}

/// Local solution of [`solve_continuous`].
#[derive(Debug, Clone, Serialize)]
pub struct LocalSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    pub feasible: bool,
}

pub(crate) fn row_of(c: &Constraint) -> Result<Row, ExprError> {
    let f = Func::new(&c.expr)?;
    Ok(match c.rel {
        Relation::Le => Row::le(f, -c.rhs),
        Relation::Ge => Row::ge(f, c.rhs),
        Relation::Eq => Row::eq(f, -c.rhs),
    })
}

/// Minimizes `objective` subject to `constraints` in the box from the given
/// starts (plus Halton points when `starts` is empty). Returns the best
/// feasible local optimum (violation below 1e-8), otherwise the least
/// violating point.
pub fn solve_continuous(
    objective: &Expr,
    constraints: &[Constraint],
    bounds: &[Interval],
    starts: &[Vec<f64>],
) -> Result<LocalSolution, SolveError> {
    let nlp = Nlp {
        obj: Func::new(objective)?,
        obj_scale: 1.0,
        rows: constraints.iter().map(row_of).collect::<Result<_, _>>()?,
        lo: bounds.iter().map(|b| b.lo).collect(),
        hi: bounds.iter().map(|b| b.hi).collect(),
    };
    let generated;
    let starts = if starts.is_empty() {
        generated = halton(&nlp.lo, &nlp.hi, 8, 0);
        &generated[..]
    } else {
        starts
    };
    match solve_nlp(&nlp, starts) {
        Some(r) => Ok(LocalSolution {
            feasible: r.violation <= FEAS_TOL,
            x: r.x,
            objective: r.objective,
            violation: r.violation,
        }),
        None if nlp.is_affine() => Ok(LocalSolution {
            x: Vec::new(),
            objective: f64::NAN,
            violation: f64::INFINITY,
            feasible: false,
        }),
        None => Err(SolveError::Diverged),
    }
}

/// Dispatches on `cfg.backend` (the penalty backend needs the original
/// problem and is rejected here).
pub fn solve(prog: &DetProgram, cfg: &SolveConfig) -> Result<Solution, SolveError> {
    match cfg.backend {
        Backend::Bnb => solve_bnb(prog, cfg),
        Backend::Enumerate => solve_enumerate(prog, cfg),
        Backend::Penalty => Err(SolveError::Config(
            "the penalty backend solves the problem directly".into(),
        )),
    }
}

/// Objective and constraint rows of `prog` over all its variables, with
/// bounds taken from `lo`/`hi`.
pub(crate) fn program_nlp(prog: &DetProgram, lo: Vec<f64>, hi: Vec<f64>) -> Result<Nlp, SolveError> {
    let sign = match prog.sense {
        crate::problem::Sense::Min => 1.0,
        crate::problem::Sense::Max => -1.0,
    };
    Ok(Nlp {
        obj: Func::new(&prog.objective)?,
        obj_scale: sign,
        rows: prog.constraints.iter().map(row_of).collect::<Result<_, _>>()?,
        lo,
        hi,
    })
}

pub(crate) fn cardinality_rows(prog: &DetProgram) -> Result<Vec<Row>, SolveError> {
    prog.cardinality
        .iter()
        .map(|r| {
            let e = Expr::sum(r.vars.iter().map(|&v| Expr::Var(v)).collect());
            row_of(&Constraint {
                expr: e,
                rel: r.rel,
                rhs: r.rhs as f64,
            })
            .map_err(SolveError::from)
        })
        .collect()
}

pub(crate) type FuncRef = Rc<Func>;
