//! Direct quantile-penalty heuristic: the empirical quantile of the training
//! scores is penalized inside a derivative-free pattern search, avoiding any
//! reformulation.

use std::time::Instant;

use super::nlp::halton;
use super::{Solution, SolveConfig, SolveError, Status};
use crate::expr::Tape;
use crate::problem::CcoProblem;
use crate::quantile::{kth_smallest, ConformalLevel};

/// Acceptance threshold on the quantile and deterministic violations.
const ACCEPT: f64 = 1e-9;

struct Penalized<'a> {
    p: &'a CcoProblem,
    obj: Tape,
    chance: Vec<Tape>,
    ineq: Vec<Tape>,
    eq: Vec<Tape>,
    train: &'a [Vec<f64>],
    rank: usize,
    evals: u64,
}

impl Penalized<'_> {
    /// Empirical `rank`-th smallest of `maxⱼ fⱼ(x, yᵢ)`.
    fn quantile(&self, x: &[f64]) -> f64 {
        let s: Vec<f64> = self
            .train
            .iter()
            .map(|y| {
                self.chance.iter().fold(f64::NEG_INFINITY, |m, t| {
                    let v = t.eval(x, y);
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        m.max(v)
                    }
                })
            })
            .collect();
        kth_smallest(&s, self.rank)
    }

    /// `(objective, quantile violation, deterministic violations)`.
    fn parts(&mut self, x: &[f64]) -> (f64, f64, f64, f64) {
        self.evals += 1;
        let j = self.obj.eval(x, &[]);
        let q = (self.quantile(x) + self.p.chi).max(0.0);
        let (mut sq, mut worst) = (0.0, 0.0f64);
        for t in &self.ineq {
            let v = t.eval(x, &[]).max(0.0);
            sq += v * v;
            worst = worst.max(v);
        }
        for t in &self.eq {
            let v = t.eval(x, &[]).abs();
            sq += v * v;
            worst = worst.max(v);
        }
        (j, q, sq, worst)
    }

    fn merit(&mut self, x: &[f64], mu: f64) -> f64 {
        let (j, q, sq, _) = self.parts(x);
        let v = j + mu * (q * q + sq);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Hooke-Jeeves pattern search on the penalized merit within the box.
fn pattern_search(pen: &mut Penalized, x: &mut Vec<f64>, mu: f64, lo: &[f64], hi: &[f64], deadline: f64, start: Instant) {
    let n = x.len();
    let mut step: Vec<f64> = (0..n).map(|i| 0.25 * (hi[i] - lo[i])).collect();
    let min_step: Vec<f64> = (0..n).map(|i| 1e-10 * (hi[i] - lo[i]).max(1.0)).collect();
    let mut fx = pen.merit(x, mu);
    let explore = |pen: &mut Penalized, base: &mut Vec<f64>, fbase: &mut f64, step: &[f64]| {
        for i in 0..n {
            let xi = base[i];
            for dir in [1.0, -1.0] {
                let t = (xi + dir * step[i]).clamp(lo[i], hi[i]);
                if t == xi {
                    continue;
                }
                base[i] = t;
                let f = pen.merit(base, mu);
                if f < *fbase {
                    *fbase = f;
                    break;
                }
                base[i] = xi;
            }
        }
    };
    for _ in 0..100_000 {
        if start.elapsed().as_secs_f64() > deadline {
            return;
        }
        let mut trial = x.clone();
        let mut ft = fx;
        explore(pen, &mut trial, &mut ft, &step);
        if ft < fx {
            // Pattern moves along the improving direction.
            loop {
                let prev = std::mem::replace(x, trial.clone());
                fx = ft;
                let mut pat: Vec<f64> = (0..n).map(|i| (2.0 * x[i] - prev[i]).clamp(lo[i], hi[i])).collect();
                let mut fp = pen.merit(&pat, mu);
                explore(pen, &mut pat, &mut fp, &step);
                if fp < fx {
                    trial = pat;
                    ft = fp;
                } else {
                    break;
                }
            }
        } else {
            let mut done = true;
            for i in 0..n {
                step[i] *= 0.5;
                done &= step[i] < min_step[i];
            }
            if done {
                return;
            }
        }
    }
}

/// Minimizes the objective subject to `Q(x) + χ ≤ 0`, where `Q` is the
/// `level.rank`-th smallest training score, by escalating quadratic
/// penalties. The status is `feasible` when the quantile and deterministic
/// constraints hold at the returned point, `infeasible` otherwise.
pub fn solve_quantile_penalty(
    p: &CcoProblem,
    train: &[Vec<f64>],
    level: &ConformalLevel,
    cfg: &SolveConfig,
) -> Result<Solution, SolveError> {
    cfg.validate()?;
    if train.len() != level.count || level.rank == 0 || level.rank > train.len() {
        return Err(SolveError::Config(format!(
            "level for {} rows with {} training rows",
            level.count,
            train.len()
        )));
    }
    let start = Instant::now();
    let compile = |es: &[crate::expr::Expr]| es.iter().map(Tape::compile).collect::<Result<Vec<_>, _>>();
    let mut pen = Penalized {
        p,
        obj: Tape::compile(&p.min_objective())?,
        chance: compile(&p.chance)?,
        ineq: compile(&p.ineq)?,
        eq: compile(&p.eq)?,
        train,
        rank: level.rank,
        evals: 0,
    };
    let lo: Vec<f64> = p.bounds.iter().map(|b| b.lo).collect();
    let hi: Vec<f64> = p.bounds.iter().map(|b| b.hi).collect();
    let mut starts = halton(&lo, &hi, cfg.multistart, 0);
    starts.push((0..p.n).map(|i| 0.5 * (lo[i] + hi[i])).collect());

    // (feasible, objective, violation, x)
    let mut best: Option<(bool, f64, f64, Vec<f64>)> = None;
    for s in starts {
        if start.elapsed().as_secs_f64() > cfg.time_limit {
            break;
        }
        let mut x = s;
        let mut mu = cfg.penalty_mu0;
        for _ in 0..cfg.penalty_steps {
            pattern_search(&mut pen, &mut x, mu, &lo, &hi, cfg.time_limit, start);
            let (_, q, _, worst) = pen.parts(&x);
            if q <= ACCEPT && worst <= ACCEPT {
                break;
            }
            mu *= cfg.penalty_growth;
        }
        let (j, q, _, worst) = pen.parts(&x);
        let viol = q.max(worst);
        let cand = (viol <= ACCEPT, j, viol, x);
        let better = match &best {
            None => true,
            Some(b) => match (cand.0, b.0) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => cand.1 < b.1,
                (false, false) => cand.2 < b.2,
            },
        };
        if better && cand.1.is_finite() {
            best = Some(cand);
        }
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(match best {
        None => Solution::empty(Status::Timeout, pen.evals, start),
        Some((feasible, _, viol, x)) => Solution {
            status: if feasible { Status::Feasible } else { Status::Infeasible },
            objective: p.objective.eval_xy(&x, &[]).unwrap_or(f64::NAN),
            full: x.clone(),
            x,
            binaries: Vec::new(),
            nodes: pen.evals,
            wall_time,
            max_violation: viol,
        },
    })
}
