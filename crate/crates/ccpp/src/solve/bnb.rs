//! Best-first branch-and-bound with plunging.
//!
//! Programs produced by the chance-constraint encoders carry score blocks;
//! their nodes fix each sample to "enforce" (score ≤ 0, equivalently `z = 1`
//! or `eᵢ⁺ = 0`) or "drop" (`z = 0` or `λᵢ = 0`). The node relaxation keeps
//! the deterministic rows and the enforced score rows over the decision
//! variables only; dropping rows yields a valid bound. At every node the
//! relaxation point is completed to a full assignment of the program (scores
//! decide the binaries, the quantile decides the KKT multipliers); a complete
//! assignment that verifies closes the node. Programs without blocks use the
//! textbook relaxation: binaries on `[0, 1]` and complementarity dropped.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::func::{Func, Nlp, Row};
use super::nlp::{halton, solve_nlp, NlpResult};
use super::{cardinality_rows, program_nlp, FuncRef, Solution, SolveConfig, SolveError, Status};
use crate::encode::{BlockVars, DetProgram, VarKind};
use crate::problem::Sense;
use crate::quantile::kth_smallest;

/// Score level counted as satisfied by the completion.
const CTOL: f64 = 1e-7;

pub(crate) struct Incumbent {
    /// Minimization-form objective.
    pub obj: f64,
    pub full: Vec<f64>,
}

struct Entry<N> {
    node: N,
    bound: f64,
    depth: u32,
    id: u64,
}

impl<N> PartialEq for Entry<N> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl<N> Eq for Entry<N> {}

impl<N> PartialOrd for Entry<N> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl<N> Ord for Entry<N> {
    /// Max-heap order: smallest bound, then deepest, then oldest first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&o.depth))
            .then(o.id.cmp(&self.id))
    }
}

/// Node semantics for the generic search driver.
trait Space {
    type Node;
    /// Evaluated root, or `None` when its relaxation is infeasible.
    fn root(&mut self, inc: &mut Option<Incumbent>) -> Option<(Self::Node, f64)>;
    /// Closes the node (possibly updating the incumbent) or returns its
    /// evaluated feasible children, preferred child first.
    fn expand(&mut self, node: &Self::Node, bound: f64, inc: &mut Option<Incumbent>) -> Vec<(Self::Node, f64)>;
}

fn search<S: Space>(space: &mut S, prog: &DetProgram, cfg: &SolveConfig, start: Instant) -> Solution {
    let mut inc: Option<Incumbent> = None;
    let mut heap: BinaryHeap<Entry<S::Node>> = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut nodes = 0u64;
    let cutoff = |inc: &Option<Incumbent>| inc.as_ref().map_or(f64::INFINITY, |i| i.obj - cfg.abs_gap);
    let mut plunge = space.root(&mut inc).map(|(node, bound)| Entry {
        node,
        bound,
        depth: 0,
        id: 0,
    });
    let mut limit = None;
    loop {
        let Some(e) = plunge.take().or_else(|| heap.pop()) else {
            break;
        };
        if e.bound >= cutoff(&inc) {
            continue;
        }
        if start.elapsed().as_secs_f64() > cfg.time_limit {
            limit = Some(Status::Timeout);
            break;
        }
        if nodes >= cfg.node_limit {
            limit = Some(Status::Feasible);
            break;
        }
        nodes += 1;
        if cfg.verbose && nodes % 1000 == 0 {
            eprintln!(
                "node {nodes}: bound {:.6} incumbent {:.6} open {}",
                e.bound,
                inc.as_ref().map_or(f64::INFINITY, |i| i.obj),
                heap.len()
            );
        }
        let children = space.expand(&e.node, e.bound, &mut inc);
        let cut = cutoff(&inc);
        let mut best: Option<Entry<S::Node>> = None;
        for (node, bound) in children {
            if bound >= cut {
                continue;
            }
            next_id += 1;
            let child = Entry {
                node,
                bound,
                depth: e.depth + 1,
                id: next_id,
            };
            match &best {
                Some(b) if b.bound <= child.bound => heap.push(child),
                _ => {
                    if let Some(b) = best.replace(child) {
                        heap.push(b);
                    }
                }
            }
        }
        plunge = best;
    }
    let status = match (limit, &inc) {
        (None, Some(_)) => Status::Optimal,
        (None, None) => Status::Infeasible,
        (Some(Status::Feasible), None) => Status::Timeout,
        (Some(s), _) => s,
    };
    match inc {
        Some(i) => Solution::verified(prog, i.full, status, nodes, start)
            .expect("incumbents are verified on entry"),
        None => Solution::empty(status, nodes, start),
    }
}

/// Verifies `full` and installs it when it improves the incumbent.
fn offer(prog: &DetProgram, full: Vec<f64>, inc: &mut Option<Incumbent>) -> bool {
    let Some(obj) = prog.min_objective_value(&full) else {
        return false;
    };
    if inc.as_ref().map_or(false, |i| i.obj <= obj) {
        return false;
    }
    if prog.verify(&full).max_violation > super::VERIFY_TOL {
        return false;
    }
    *inc = Some(Incumbent { obj, full });
    true
}

/// Solves `prog` by branch-and-bound.
pub fn solve_bnb(prog: &DetProgram, cfg: &SolveConfig) -> Result<Solution, SolveError> {
    cfg.validate()?;
    prog.check().map_err(SolveError::Program)?;
    let start = Instant::now();
    if block_structured(prog) {
        let mut space = BlockSpace::new(prog, cfg)?;
        Ok(search(&mut space, prog, cfg, start))
    } else {
        let mut space = GenericSpace::new(prog, cfg)?;
        Ok(search(&mut space, prog, cfg, start))
    }
}

/// True when every non-decision variable belongs to a score block and the
/// objective only involves decision variables.
pub(crate) fn block_structured(prog: &DetProgram) -> bool {
    let n = prog.meta.decision_dim;
    if prog.objective.var_dim() > n {
        return false;
    }
    if prog.blocks.is_empty() {
        return prog.vars.len() == n && prog.complementarity.is_empty();
    }
    let owned: usize = prog
        .blocks
        .iter()
        .map(|b| {
            let k = b.scores.len();
            let link = b
                .max_link
                .as_ref()
                .map_or(0, |l| l.mu.len() + l.sigma.iter().map(Vec::len).sum::<usize>());
            link + match &b.vars {
                BlockVars::Mip { .. } => k,
                BlockVars::Kkt { .. } => 1 + 5 * k,
            }
        })
        .sum();
    prog.vars.len() == n + owned
}

const FREE: u8 = 0;
const ENFORCE: u8 = 1;
const DROP: u8 = 2;

struct BlockInfo {
    /// `[sample][function]` over decision variables.
    funcs: Vec<Vec<FuncRef>>,
    chi: f64,
    budget: usize,
    rank: usize,
}

#[derive(Clone)]
struct BNode {
    state: Vec<Vec<u8>>,
    drops: Vec<usize>,
    x: Vec<f64>,
}

struct BlockSpace<'a> {
    prog: &'a DetProgram,
    cfg: &'a SolveConfig,
    det_rows: Vec<Row>,
    obj: FuncRef,
    obj_scale: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    blocks: Vec<BlockInfo>,
    evals: usize,
}

impl<'a> BlockSpace<'a> {
    fn new(prog: &'a DetProgram, cfg: &'a SolveConfig) -> Result<Self, SolveError> {
        let n = prog.meta.decision_dim;
        let det_rows = prog
            .constraints
            .iter()
            .filter(|c| c.expr.var_dim() <= n)
            .map(super::row_of)
            .collect::<Result<Vec<_>, _>>()?;
        let blocks = prog
            .blocks
            .iter()
            .map(|b| {
                let funcs = b
                    .scores
                    .iter()
                    .map(|fs| fs.iter().map(Func::new).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?;
                let rank = match &b.vars {
                    BlockVars::Mip { rank, .. } => *rank,
                    BlockVars::Kkt { .. } => b.scores.len() - b.drop_budget,
                };
                Ok(BlockInfo {
                    funcs,
                    chi: b.chi,
                    budget: b.drop_budget,
                    rank,
                })
            })
            .collect::<Result<Vec<_>, SolveError>>()?;
        Ok(BlockSpace {
            prog,
            cfg,
            det_rows,
            obj: Func::new(&prog.objective)?,
            obj_scale: if prog.sense == Sense::Max { -1.0 } else { 1.0 },
            lo: prog.vars[..n].iter().map(|v| v.lo).collect(),
            hi: prog.vars[..n].iter().map(|v| v.hi).collect(),
            blocks,
            evals: 0,
        })
    }

    fn is_enforced(&self, node: &BNode, b: usize, i: usize) -> bool {
        match node.state[b][i] {
            ENFORCE => true,
            FREE => node.drops[b] >= self.blocks[b].budget,
            _ => false,
        }
    }

    fn relax(&mut self, node: &BNode, root: bool) -> Option<NlpResult> {
        let mut rows = self.det_rows.clone();
        for (b, blk) in self.blocks.iter().enumerate() {
            for (i, fs) in blk.funcs.iter().enumerate() {
                if self.is_enforced(node, b, i) {
                    rows.extend(fs.iter().map(|f| Row::le(f.clone(), blk.chi)));
                }
            }
        }
        let nlp = Nlp {
            obj: self.obj.clone(),
            obj_scale: self.obj_scale,
            rows,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        };
        self.evals += 1;
        let starts = if root {
            let mut s = halton(&nlp.lo, &nlp.hi, self.cfg.multistart, 0);
            s.push((0..nlp.dim()).map(|i| 0.5 * (nlp.lo[i] + nlp.hi[i])).collect());
            s
        } else {
            let mut s = vec![node.x.clone()];
            s.extend(halton(&nlp.lo, &nlp.hi, 1, self.evals));
            s
        };
        solve_nlp(&nlp, &starts).filter(|r| r.feasible())
    }

    /// Per-block sample scores `maxⱼ fⱼ(x) + χ` and per-function values.
    fn scores(&self, x: &[f64]) -> Vec<(Vec<f64>, Vec<Vec<f64>>)> {
        self.blocks
            .iter()
            .map(|blk| {
                let vals: Vec<Vec<f64>> = blk
                    .funcs
                    .iter()
                    .map(|fs| {
                        fs.iter()
                            .map(|f| {
                                let v = f.eval(x);
                                if v.is_nan() {
                                    f64::INFINITY
                                } else {
                                    v
                                }
                            })
                            .collect()
                    })
                    .collect();
                let s = vals
                    .iter()
                    .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + blk.chi)
                    .collect();
                (s, vals)
            })
            .collect()
    }

    /// Full program assignment at `x`, or `None` when some block's rank
    /// requirement fails.
    fn complete(&self, x: &[f64], scores: &[(Vec<f64>, Vec<Vec<f64>>)]) -> Option<Vec<f64>> {
        let prog = self.prog;
        let mut full: Vec<f64> = prog.vars.iter().map(|v| v.lo.max(0.0).min(v.hi)).collect();
        full[..x.len()].copy_from_slice(x);
        for ((blk, info), (s, vals)) in prog.blocks.iter().zip(&self.blocks).zip(scores) {
            if kth_smallest(s, info.rank.max(1)) > CTOL {
                return None;
            }
            let fmax: Vec<f64> = s.iter().map(|v| v - blk.chi).collect();
            if let Some(link) = &blk.max_link {
                for (i, v) in vals.iter().enumerate() {
                    full[link.mu[i]] = fmax[i];
                    let arg = (0..v.len()).fold(0, |a, j| if v[j] > v[a] { j } else { a });
                    for (j, &sv) in link.sigma[i].iter().enumerate() {
                        full[sv] = if j == arg { 1.0 } else { 0.0 };
                    }
                }
            }
            match &blk.vars {
                BlockVars::Mip { z, .. } => {
                    for (i, &zi) in z.iter().enumerate() {
                        full[zi] = if s[i] <= CTOL { 1.0 } else { 0.0 };
                    }
                }
                BlockVars::Kkt {
                    alpha,
                    q,
                    e_plus,
                    e_minus,
                    gamma,
                    lambda,
                    beta,
                } => {
                    let k = fmax.len();
                    let qv = kth_smallest(&fmax, info.rank.max(1));
                    let below = fmax.iter().filter(|&&f| f < qv).count();
                    let ties = fmax.iter().filter(|&&f| f == qv).count();
                    let fill = ((k as f64 * alpha - below as f64) / ties as f64).clamp(0.0, 1.0);
                    full[*q] = qv;
                    for i in 0..k {
                        let l = match fmax[i].total_cmp(&qv) {
                            Ordering::Less => 1.0,
                            Ordering::Equal => fill,
                            Ordering::Greater => 0.0,
                        };
                        full[lambda[i]] = l;
                        full[beta[i]] = 1.0 - l;
                        full[gamma[i]] = l - alpha;
                        full[e_plus[i]] = (fmax[i] - qv).max(0.0);
                        full[e_minus[i]] = (qv - fmax[i]).max(0.0);
                    }
                }
            }
        }
        Some(full)
    }

    /// Re-solves with the `rank` best samples of each block enforced while
    /// this keeps improving the incumbent.
    fn improve(&mut self, mut x: Vec<f64>, inc: &mut Option<Incumbent>) {
        for _ in 0..10 {
            let sc = self.scores(&x);
            let mut node = BNode {
                state: Vec::new(),
                drops: Vec::new(),
                x: x.clone(),
            };
            for ((s, _), blk) in sc.iter().zip(&self.blocks) {
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
                let mut st = vec![DROP; s.len()];
                for &i in &order[..blk.rank.min(s.len())] {
                    st[i] = ENFORCE;
                }
                node.state.push(st);
                node.drops.push(blk.budget);
            }
            let Some(r) = self.relax(&node, false) else {
                return;
            };
            let cut = inc.as_ref().map_or(f64::INFINITY, |i| i.obj - self.cfg.abs_gap);
            if r.objective >= cut {
                return;
            }
            let sc = self.scores(&r.x);
            let improved = self.complete(&r.x, &sc).map_or(false, |full| offer(self.prog, full, inc));
            if !improved {
                return;
            }
            x = r.x;
        }
    }

    /// Tries to close the node at its relaxation point.
    fn try_close(&mut self, x: &[f64], inc: &mut Option<Incumbent>) -> Result<(), Vec<(Vec<f64>, Vec<Vec<f64>>)>> {
        let sc = self.scores(x);
        match self.complete(x, &sc) {
            Some(full) => {
                if offer(self.prog, full, inc) {
                    self.improve(x.to_vec(), inc);
                }
                Ok(())
            }
            None => Err(sc),
        }
    }
}

impl Space for BlockSpace<'_> {
    type Node = BNode;

    fn root(&mut self, _inc: &mut Option<Incumbent>) -> Option<(BNode, f64)> {
        let node = BNode {
            state: self.blocks.iter().map(|b| vec![FREE; b.funcs.len()]).collect(),
            drops: vec![0; self.blocks.len()],
            x: Vec::new(),
        };
        let r = self.relax(&node, true)?;
        Some((BNode { x: r.x, ..node }, r.objective))
    }

    fn expand(&mut self, node: &BNode, bound: f64, inc: &mut Option<Incumbent>) -> Vec<(BNode, f64)> {
        let sc = match self.try_close(&node.x, inc) {
            Ok(()) => return Vec::new(),
            Err(sc) => sc,
        };
        // Most violated free sample across blocks.
        let mut pick: Option<(usize, usize, f64)> = None;
        for (b, (s, _)) in sc.iter().enumerate() {
            for (i, &v) in s.iter().enumerate() {
                if node.state[b][i] == FREE && v > CTOL && pick.map_or(true, |p| v > p.2) {
                    pick = Some((b, i, v));
                }
            }
        }
        let Some((b, i, _)) = pick else {
            return Vec::new();
        };
        let mut out = Vec::new();
        if node.drops[b] < self.blocks[b].budget {
            let mut child = node.clone();
            child.state[b][i] = DROP;
            child.drops[b] += 1;
            if child.drops[b] == self.blocks[b].budget {
                if let Some(r) = self.relax(&child, false) {
                    child.x = r.x;
                    out.push((child, r.objective));
                }
            } else {
                out.push((child, bound));
            }
        }
        let mut child = node.clone();
        child.state[b][i] = ENFORCE;
        if let Some(r) = self.relax(&child, false) {
            child.x = r.x;
            out.push((child, r.objective));
        }
        out
    }
}

#[derive(Clone)]
struct GNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
}

struct GenericSpace<'a> {
    prog: &'a DetProgram,
    cfg: &'a SolveConfig,
    base: Nlp,
    binaries: Vec<usize>,
    evals: usize,
}

impl<'a> GenericSpace<'a> {
    fn new(prog: &'a DetProgram, cfg: &'a SolveConfig) -> Result<Self, SolveError> {
        let lo: Vec<f64> = prog.vars.iter().map(|v| v.lo).collect();
        let hi: Vec<f64> = prog.vars.iter().map(|v| v.hi).collect();
        let mut base = program_nlp(prog, lo, hi)?;
        base.rows.extend(cardinality_rows(prog)?);
        Ok(GenericSpace {
            prog,
            cfg,
            base,
            binaries: prog.binaries(),
            evals: 0,
        })
    }

    fn relax(&mut self, lo: &[f64], hi: &[f64], warm: Option<&[f64]>) -> Option<NlpResult> {
        let mut nlp = self.base.clone();
        nlp.lo = lo.to_vec();
        nlp.hi = hi.to_vec();
        self.evals += 1;
        let starts = match warm {
            None => {
                let mut s = halton(lo, hi, self.cfg.multistart, 0);
                s.push((0..lo.len()).map(|i| 0.5 * (lo[i] + hi[i])).collect());
                s
            }
            Some(w) => {
                let mut s = vec![w.to_vec()];
                s.extend(halton(lo, hi, 1, self.evals));
                s
            }
        };
        solve_nlp(&nlp, &starts).filter(|r| r.feasible())
    }

    fn child(&mut self, node: &GNode, var: usize, lo: f64, hi: f64) -> Option<(GNode, f64)> {
        let mut c = node.clone();
        c.lo[var] = lo;
        c.hi[var] = hi;
        let r = self.relax(&c.lo, &c.hi, Some(&node.x))?;
        c.x = r.x;
        Some((c, r.objective))
    }
}

impl Space for GenericSpace<'_> {
    type Node = GNode;

    fn root(&mut self, _inc: &mut Option<Incumbent>) -> Option<(GNode, f64)> {
        let lo = self.base.lo.clone();
        let hi = self.base.hi.clone();
        let r = self.relax(&lo, &hi, None)?;
        Some((GNode { lo, hi, x: r.x }, r.objective))
    }

    fn expand(&mut self, node: &GNode, _bound: f64, inc: &mut Option<Incumbent>) -> Vec<(GNode, f64)> {
        let x = &node.x;
        let frac = self
            .binaries
            .iter()
            .map(|&b| (b, (x[b] - x[b].round()).abs()))
            .filter(|&(_, f)| f > 1e-6)
            .fold(None, |a: Option<(usize, f64)>, c| match a {
                Some(p) if p.1 >= c.1 => Some(p),
                _ => Some(c),
            });
        if let Some((b, _)) = frac {
            return [(0.0, 0.0), (1.0, 1.0)]
                .iter()
                .filter_map(|&(lo, hi)| self.child(node, b, lo, hi))
                .collect();
        }
        let pair = self
            .prog
            .complementarity
            .iter()
            .map(|c| (c, (x[c.a] * x[c.b]).abs()))
            .filter(|&(_, p)| p > 1e-9)
            .fold(None, |a: Option<(_, f64)>, c| match a {
                Some(p) if p.1 >= c.1 => Some(p),
                _ => Some(c),
            });
        if let Some((c, _)) = pair {
            let (a, b) = (c.a, c.b);
            let la = node.lo[a];
            let lb = node.lo[b];
            return [self.child(node, a, la, la.max(0.0)), self.child(node, b, lb, lb.max(0.0))]
                .into_iter()
                .flatten()
                .collect();
        }
        let mut full = x.clone();
        for (v, pv) in full.iter_mut().zip(&self.prog.vars) {
            if pv.kind == VarKind::Binary {
                *v = v.round();
            }
        }
        offer(self.prog, full, inc);
        Vec::new()
    }
}
