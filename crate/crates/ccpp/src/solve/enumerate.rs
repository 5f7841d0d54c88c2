//! Exhaustive enumeration of binaries and complementarity branches, used as
//! a reference solver on tiny programs.

use std::time::Instant;

use super::nlp::{halton, solve_nlp};
use super::{program_nlp, Solution, SolveConfig, SolveError, Status};
use crate::encode::{DetProgram, Relation};

/// Largest number of binaries plus complementarity pairs accepted.
pub const MAX_ENUMERATED: usize = 20;

struct Search<'a> {
    prog: &'a DetProgram,
    cfg: &'a SolveConfig,
    binaries: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
    leaves: u64,
    start: Instant,
    timed_out: bool,
}

impl Search<'_> {
    /// False when a cardinality row can no longer be met.
    fn cardinality_open(&self) -> bool {
        self.prog.cardinality.iter().all(|r| {
            let ones = r.vars.iter().filter(|&&v| self.lo[v] >= 0.5).count();
            let free = r.vars.iter().filter(|&&v| self.lo[v] < 0.5 && self.hi[v] >= 0.5).count();
            match r.rel {
                Relation::Ge => ones + free >= r.rhs,
                Relation::Le => ones <= r.rhs,
                Relation::Eq => ones <= r.rhs && ones + free >= r.rhs,
            }
        })
    }

    fn dfs(&mut self, depth: usize) {
        if self.timed_out || !self.cardinality_open() {
            return;
        }
        if self.start.elapsed().as_secs_f64() > self.cfg.time_limit {
            self.timed_out = true;
            return;
        }
        let nb = self.binaries.len();
        if depth < nb {
            let v = self.binaries[depth];
            for val in [0.0, 1.0] {
                self.lo[v] = val;
                self.hi[v] = val;
                self.dfs(depth + 1);
            }
            self.lo[v] = 0.0;
            self.hi[v] = 1.0;
            return;
        }
        let k = depth - nb;
        if k < self.prog.complementarity.len() {
            let c = self.prog.complementarity[k];
            for v in [c.a, c.b] {
                let saved = self.hi[v];
                // Both members are nonnegative; zero one of them.
                if self.lo[v] <= 0.0 {
                    self.hi[v] = self.lo[v].max(0.0);
                    self.dfs(depth + 1);
                }
                self.hi[v] = saved;
            }
            return;
        }
        self.leaf();
    }

    fn leaf(&mut self) {
        self.leaves += 1;
        let Ok(nlp) = program_nlp(self.prog, self.lo.clone(), self.hi.clone()) else {
            return;
        };
        let mut starts = halton(&self.lo, &self.hi, self.cfg.multistart, 0);
        starts.push((0..self.lo.len()).map(|i| 0.5 * (self.lo[i] + self.hi[i])).collect());
        let Some(r) = solve_nlp(&nlp, &starts) else {
            return;
        };
        if !r.feasible() || self.best.as_ref().map_or(false, |b| b.0 <= r.objective) {
            return;
        }
        if self.prog.verify(&r.x).max_violation <= super::VERIFY_TOL {
            self.best = Some((r.objective, r.x));
        }
    }
}

/// Solves `prog` by enumerating every binary assignment and every
/// complementarity branch, solving each leaf as a continuous program.
pub fn solve_enumerate(prog: &DetProgram, cfg: &SolveConfig) -> Result<Solution, SolveError> {
    cfg.validate()?;
    prog.check().map_err(SolveError::Program)?;
    let binaries = prog.binaries();
    let count = binaries.len() + prog.complementarity.len();
    if count > MAX_ENUMERATED {
        return Err(SolveError::TooManyBinaries(count));
    }
    let mut s = Search {
        prog,
        cfg,
        binaries,
        lo: prog.vars.iter().map(|v| v.lo).collect(),
        hi: prog.vars.iter().map(|v| v.hi).collect(),
        best: None,
        leaves: 0,
        start: Instant::now(),
        timed_out: false,
    };
    s.dfs(0);
    let status = match (&s.best, s.timed_out) {
        (_, true) => Status::Timeout,
        (Some(_), false) => Status::Optimal,
        (None, false) => Status::Infeasible,
    };
    Ok(match s.best.take() {
        Some((_, full)) => Solution::verified(prog, full, status, s.leaves, s.start)
            .expect("verified before acceptance"),
        None => Solution::empty(status, s.leaves, s.start),
    })
}
