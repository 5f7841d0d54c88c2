//! Encoders from a chance-constrained problem and training rows to a
//! deterministic program: the big-M indicator (MIP) form, the KKT form of the
//! quantile's pinball-loss characterization, and joint-constraint union and
//! max-operator variants.

mod program;

pub use program::{
    BigM, BlockVars, CardinalityRow, Complementarity, Constraint, DetProgram, MaxLink, ProgVar,
    ProgramMeta, Relation, ScoreBlock, VarKind, Verification,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Interval, Params};
use crate::problem::CcoProblem;
use crate::quantile::{exact_ceil_mul, ConformalLevel, QuantileError};
use crate::robust::delta_tilde;

/// Strict-violation margin of indicator rows.
pub const ZETA: f64 = 1e-6;
/// Relative outer widening of interval bounds.
pub const WIDENING: f64 = 0.05;
/// Smallest magnitude of the big-M constants.
const MIN_BIG_M: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("big-M derivation failed: {0}")]
    BigM(#[source] ExprError),
    #[error("chance constraint is violated for every sample on the box (lower bound {0} > 0)")]
    Unsatisfiable(f64),
    #[error(transparent)]
    Level(#[from] QuantileError),
    #[error("invalid alpha {0}")]
    InvalidAlpha(f64),
    #[error("expected {expected} constraint(s), problem has {got}")]
    ConstraintCount { expected: String, got: usize },
    #[error("level count {level} differs from {rows} training rows")]
    SizeMismatch { level: usize, rows: usize },
    #[error("sample substitution failed: {0}")]
    Sample(#[source] ExprError),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Outer encoding of a chance constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Outer {
    #[default]
    Mip,
    Kkt,
}

/// Interval images `[j][i]` of each chance function at each training row over
/// the variable box, outer-widened by [`WIDENING`] of their width.
pub fn sample_intervals(p: &CcoProblem, train: &[Vec<f64>]) -> Result<Vec<Vec<Interval>>, EncodeError> {
    let params = Params::new();
    p.chance
        .iter()
        .map(|f| {
            train
                .iter()
                .map(|y| {
                    let iv = f.interval(&p.bounds, y, &params).map_err(EncodeError::BigM)?;
                    let w = WIDENING * iv.width();
                    Ok(Interval::new(iv.lo - w, iv.hi + w))
                })
                .collect()
        })
        .collect()
}

/// Bounds `M ≥ sup f` and `m ≤ inf f` over the box and all training rows
/// (every chance function), with `ζ = 1e-6`.
pub fn derive_big_m(p: &CcoProblem, train: &[Vec<f64>]) -> Result<BigM, EncodeError> {
    let ivs = sample_intervals(p, train)?;
    Ok(big_m_of(&ivs))
}

fn big_m_of(ivs: &[Vec<Interval>]) -> BigM {
    let all = ivs.iter().flatten();
    BigM {
        big_m: all.clone().map(|i| i.hi).fold(f64::NEG_INFINITY, f64::max),
        small_m: all.map(|i| i.lo).fold(f64::INFINITY, f64::min),
        zeta: ZETA,
    }
}

/// Constants for scores shifted by `shift`, clamped to `M > 0 > m`.
fn shifted_big_m(raw: BigM, shift: f64) -> Result<BigM, EncodeError> {
    let m = raw.small_m + shift;
    if m > 0.0 {
        return Err(EncodeError::Unsatisfiable(m));
    }
    Ok(BigM {
        big_m: (raw.big_m + shift).max(MIN_BIG_M),
        small_m: m.min(-MIN_BIG_M),
        zeta: raw.zeta,
    })
}

/// Chance functions with each training row substituted, indexed `[j][i]`.
fn substituted(p: &CcoProblem, train: &[Vec<f64>]) -> Result<Vec<Vec<Expr>>, EncodeError> {
    p.chance
        .iter()
        .map(|f| {
            train
                .iter()
                .map(|y| f.substitute_samples(y).map_err(EncodeError::Sample))
                .collect()
        })
        .collect()
}

/// Program with the decision variables, objective and deterministic rows.
pub fn base_program(p: &CcoProblem, origin: &str) -> DetProgram {
    let mut prog = DetProgram::new(origin, &p.bounds, p.objective.clone(), p.sense);
    for h in &p.ineq {
        prog.add_constraint(h.clone(), Relation::Le, 0.0);
    }
    for g in &p.eq {
        prog.add_constraint(g.clone(), Relation::Eq, 0.0);
    }
    prog.meta.chi = p.chi;
    prog
}

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

fn v(i: usize) -> Expr {
    Expr::Var(i)
}

/// `1 − z`.
fn one_minus(z: usize) -> Expr {
    Expr::sub(c(1.0), v(z))
}

/// Adds `mu[i] = maxⱼ fs[i][j]` linking and returns the per-sample score
/// expressions `mu[i]`.
fn add_max_link(
    prog: &mut DetProgram,
    fs: &[Vec<Expr>],
    ivs: &[Vec<Interval>],
    tag: &str,
) -> (Vec<Expr>, MaxLink) {
    let raw = big_m_of(ivs);
    let m_link = (raw.big_m - raw.small_m).max(MIN_BIG_M);
    let mut link = MaxLink {
        mu: Vec::new(),
        sigma: Vec::new(),
    };
    let mut scores = Vec::new();
    for (i, row) in fs.iter().enumerate() {
        let lo = row
            .iter()
            .enumerate()
            .map(|(j, _)| ivs[j][i].lo)
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = row
            .iter()
            .enumerate()
            .map(|(j, _)| ivs[j][i].hi)
            .fold(f64::NEG_INFINITY, f64::max);
        let mu = prog.add_var(format!("{tag}mu{i}"), VarKind::Continuous, lo, hi);
        let mut sig = Vec::new();
        for (j, f) in row.iter().enumerate() {
            let s = prog.add_var(format!("{tag}sigma{i}_{j}"), VarKind::Binary, 0.0, 1.0);
            sig.push(s);
            prog.add_constraint(Expr::sub(v(mu), f.clone()), Relation::Ge, 0.0);
            let slack = Expr::mul(c(m_link), one_minus(s));
            prog.add_constraint(
                Expr::sub(Expr::sub(f.clone(), slack.clone()), v(mu)),
                Relation::Le,
                0.0,
            );
            prog.add_constraint(
                Expr::sub(Expr::sub(v(mu), f.clone()), slack),
                Relation::Le,
                0.0,
            );
        }
        prog.cardinality.push(CardinalityRow {
            vars: sig.clone(),
            rel: Relation::Eq,
            rhs: 1,
        });
        link.mu.push(mu);
        link.sigma.push(sig);
        scores.push(v(mu));
    }
    (scores, link)
}

/// Indicator rows `s − M(1−z) ≤ 0`, `s − (ζ + (m−ζ)z) ≥ 0` with `s = score +
/// shift`, and the cardinality row `Σz ≥ rank`.
fn add_mip_rows(
    prog: &mut DetProgram,
    scores: &[Expr],
    bm: BigM,
    shift: f64,
    rank: usize,
    tag: &str,
) -> Vec<usize> {
    let mut z = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        let zi = prog.add_var(format!("{tag}z{i}"), VarKind::Binary, 0.0, 1.0);
        z.push(zi);
        prog.add_constraint(
            Expr::sub(s.clone(), Expr::mul(c(bm.big_m), one_minus(zi))),
            Relation::Le,
            -shift,
        );
        prog.add_constraint(
            Expr::sub(
                s.clone(),
                Expr::add(c(bm.zeta), Expr::mul(c(bm.small_m - bm.zeta), v(zi))),
            ),
            Relation::Ge,
            -shift,
        );
    }
    prog.cardinality.push(CardinalityRow {
        vars: z.clone(),
        rel: Relation::Ge,
        rhs: rank,
    });
    z
}

/// Stationarity, feasibility and complementarity rows of the pinball-loss
/// minimization of `scores` at level `alpha`.
fn add_kkt_rows(
    prog: &mut DetProgram,
    scores: &[Expr],
    raw: BigM,
    alpha: f64,
    chi: f64,
    tag: &str,
) -> BlockVars {
    let (lo, hi) = (raw.small_m, raw.big_m.max(raw.small_m));
    let q = prog.add_var(format!("{tag}q"), VarKind::Continuous, lo, hi);
    prog.add_constraint(v(q), Relation::Le, -chi);
    let range = hi - lo;
    let (mut ep, mut em, mut ga, mut la, mut be) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..scores.len() {
        ep.push(prog.add_var(format!("{tag}e_plus{i}"), VarKind::Continuous, 0.0, range));
        em.push(prog.add_var(format!("{tag}e_minus{i}"), VarKind::Continuous, 0.0, range));
        ga.push(prog.add_var(format!("{tag}gamma{i}"), VarKind::Continuous, -alpha, 1.0 - alpha));
        la.push(prog.add_var(format!("{tag}lambda{i}"), VarKind::Continuous, 0.0, 1.0));
        be.push(prog.add_var(format!("{tag}beta{i}"), VarKind::Continuous, 0.0, 1.0));
    }
    for (i, s) in scores.iter().enumerate() {
        let stat_lambda = Expr::sub(Expr::add(c(alpha), v(ga[i])), v(la[i]));
        let stat_beta = Expr::sub(Expr::sub(c(1.0 - alpha), v(ga[i])), v(be[i]));
        debug_assert!({
            let sum = crate::expr::affine_sparse(&Expr::add(stat_lambda.clone(), stat_beta.clone()), &[])
                .expect("affine");
            (sum.constant - 1.0).abs() < 1e-12
                && sum.terms == vec![(la[i].min(be[i]), -1.0), (la[i].max(be[i]), -1.0)]
        });
        prog.add_constraint(stat_lambda, Relation::Eq, 0.0);
        prog.add_constraint(stat_beta, Relation::Eq, 0.0);
        prog.add_constraint(
            Expr::add(Expr::sub(Expr::sub(v(ep[i]), v(em[i])), s.clone()), v(q)),
            Relation::Eq,
            0.0,
        );
        prog.complementarity.push(Complementarity { a: la[i], b: ep[i] });
        prog.complementarity.push(Complementarity { a: be[i], b: em[i] });
    }
    prog.add_constraint(Expr::sum(ga.iter().map(|&g| v(g)).collect()), Relation::Eq, 0.0);
    BlockVars::Kkt {
        alpha,
        q,
        e_plus: ep,
        e_minus: em,
        gamma: ga,
        lambda: la,
        beta: be,
    }
}

fn check_alpha(alpha: f64, count: usize) -> Result<usize, EncodeError> {
    if !(alpha > 0.0 && alpha <= 1.0) || count == 0 {
        return Err(EncodeError::InvalidAlpha(alpha));
    }
    Ok(exact_ceil_mul(count, alpha).0.max(1))
}

/// One chance-constraint block: per-sample function lists, their widened
/// intervals, and how to encode it.
struct BlockSpec<'a> {
    fs: Vec<Vec<Expr>>,
    ivs: Vec<Vec<Interval>>,
    outer: Outer,
    rank: usize,
    alpha: f64,
    shift: f64,
    tag: &'a str,
}

fn add_block(prog: &mut DetProgram, spec: BlockSpec) -> Result<(), EncodeError> {
    let raw = big_m_of(&spec.ivs);
    let (scores, max_link) = if spec.fs.first().map_or(false, |r| r.len() > 1) {
        let (s, l) = add_max_link(prog, &spec.fs, &spec.ivs, spec.tag);
        (s, Some(l))
    } else {
        (spec.fs.iter().map(|r| r[0].clone()).collect(), None)
    };
    let count = scores.len();
    let (vars, bm) = match spec.outer {
        Outer::Mip => {
            let bm = shifted_big_m(raw, spec.shift)?;
            let z = add_mip_rows(prog, &scores, bm, spec.shift, spec.rank, spec.tag);
            (
                BlockVars::Mip {
                    z,
                    rank: spec.rank,
                },
                bm,
            )
        }
        Outer::Kkt => {
            let bm = shifted_big_m(raw, spec.shift)?;
            let vars = add_kkt_rows(prog, &scores, raw, spec.alpha, spec.shift, spec.tag);
            (vars, bm)
        }
    };
    prog.meta.big_m.get_or_insert(bm);
    prog.meta.rank.get_or_insert(spec.rank);
    prog.meta.alpha.get_or_insert(spec.alpha);
    prog.blocks.push(ScoreBlock {
        scores: spec.fs,
        chi: spec.shift,
        drop_budget: count - spec.rank.min(count),
        vars,
        max_link,
        big_m: bm,
    });
    Ok(())
}

/// Transposes `[j][i]` to `[i][j]`.
fn per_sample<T: Clone>(by_fn: &[Vec<T>]) -> Vec<Vec<T>> {
    let count = by_fn.first().map_or(0, Vec::len);
    (0..count)
        .map(|i| by_fn.iter().map(|f| f[i].clone()).collect())
        .collect()
}

fn check_level(level: &ConformalLevel, train: &[Vec<f64>]) -> Result<(), EncodeError> {
    if level.count != train.len() {
        return Err(EncodeError::SizeMismatch {
            level: level.count,
            rows: train.len(),
        });
    }
    Ok(())
}

fn require_s(p: &CcoProblem, joint: bool) -> Result<(), EncodeError> {
    let ok = if joint { p.s() >= 2 } else { p.s() == 1 };
    if ok {
        Ok(())
    } else {
        Err(EncodeError::ConstraintCount {
            expected: if joint { "at least 2".into() } else { "exactly 1".into() },
            got: p.s(),
        })
    }
}

/// Big-M indicator encoding: at least `level.rank` of the `K` training
/// scores must be nonpositive (at most `−χ` under tightening).
pub fn encode_mip(p: &CcoProblem, train: &[Vec<f64>], level: &ConformalLevel) -> Result<DetProgram, EncodeError> {
    require_s(p, false)?;
    check_level(level, train)?;
    let mut prog = base_program(p, "cpp-mip");
    let fs = substituted(p, train)?;
    add_block(
        &mut prog,
        BlockSpec {
            fs: per_sample(&fs),
            ivs: sample_intervals(p, train)?,
            outer: Outer::Mip,
            rank: level.rank,
            alpha: level.alpha,
            shift: p.chi,
            tag: "",
        },
    )?;
    Ok(prog)
}

/// KKT encoding of `Quantile_α(scores) ≤ −χ` through the pinball-loss
/// linear program.
pub fn encode_kkt(p: &CcoProblem, train: &[Vec<f64>], alpha: f64) -> Result<DetProgram, EncodeError> {
    require_s(p, false)?;
    let rank = check_alpha(alpha, train.len())?;
    let mut prog = base_program(p, "cpp-kkt");
    let fs = substituted(p, train)?;
    add_block(
        &mut prog,
        BlockSpec {
            fs: per_sample(&fs),
            ivs: sample_intervals(p, train)?,
            outer: Outer::Kkt,
            rank,
            alpha,
            shift: p.chi,
            tag: "",
        },
    )?;
    Ok(prog)
}

/// Level of each union sub-encoding: `δ/s`, robust when requested.
pub fn union_level(p: &CcoProblem, count: usize, robust: bool) -> Result<ConformalLevel, EncodeError> {
    let delta = p.delta / p.s() as f64;
    Ok(if robust {
        ConformalLevel::robust(&delta_tilde(delta, count, &p.divergence()).map_err(QuantileError::from)?)?
    } else {
        ConformalLevel::new(delta, count)?
    })
}

/// Joint constraint through Boole's inequality: one sub-encoding per
/// constraint at level `δ/s`, sharing the decision variables.
pub fn encode_joint_union(
    p: &CcoProblem,
    train: &[Vec<f64>],
    outer: Outer,
    robust: bool,
) -> Result<DetProgram, EncodeError> {
    require_s(p, true)?;
    let level = union_level(p, train.len(), robust)?;
    let origin = match outer {
        Outer::Mip => "union-mip",
        Outer::Kkt => "union-kkt",
    };
    let mut prog = base_program(p, origin);
    let fs = substituted(p, train)?;
    let ivs = sample_intervals(p, train)?;
    for j in 0..p.s() {
        let tag = format!("c{j}_");
        add_block(
            &mut prog,
            BlockSpec {
                fs: fs[j].iter().map(|f| vec![f.clone()]).collect(),
                ivs: vec![ivs[j].clone()],
                outer,
                rank: level.rank,
                alpha: level.alpha,
                shift: p.chi,
                tag: &tag,
            },
        )?;
    }
    Ok(prog)
}

/// Joint constraint through `maxⱼ fⱼ` with exact max linking.
pub fn encode_joint_max(
    p: &CcoProblem,
    train: &[Vec<f64>],
    level: &ConformalLevel,
    outer: Outer,
) -> Result<DetProgram, EncodeError> {
    require_s(p, true)?;
    check_level(level, train)?;
    let origin = match outer {
        Outer::Mip => "max-mip",
        Outer::Kkt => "max-kkt",
    };
    let rank = match outer {
        Outer::Mip => level.rank,
        Outer::Kkt => check_alpha(level.alpha, train.len())?,
    };
    let mut prog = base_program(p, origin);
    let fs = substituted(p, train)?;
    add_block(
        &mut prog,
        BlockSpec {
            fs: per_sample(&fs),
            ivs: sample_intervals(p, train)?,
            outer,
            rank,
            alpha: level.alpha,
            shift: p.chi,
            tag: "",
        },
    )?;
    Ok(prog)
}

/// Indicator encoding with an arbitrary threshold and score shift, shared
/// with the sample-average baseline.
pub fn encode_indicator(
    p: &CcoProblem,
    train: &[Vec<f64>],
    threshold: usize,
    shift: f64,
    origin: &str,
) -> Result<DetProgram, EncodeError> {
    if threshold > train.len() {
        return Err(EncodeError::Invalid(format!(
            "threshold {threshold} exceeds {} rows",
            train.len()
        )));
    }
    let mut prog = base_program(p, origin);
    let fs = substituted(p, train)?;
    add_block(
        &mut prog,
        BlockSpec {
            fs: per_sample(&fs),
            ivs: sample_intervals(p, train)?,
            outer: Outer::Mip,
            rank: threshold,
            alpha: threshold as f64 / train.len().max(1) as f64,
            shift,
            tag: "",
        },
    )?;
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::problem::Sense;
    use crate::robust::DivergenceKind;

    fn problem(chance: &[&str], lo: f64, hi: f64, n: usize) -> CcoProblem {
        CcoProblem {
            name: "t".into(),
            n,
            d: 1,
            sense: Sense::Min,
            objective: parse("x[0]").unwrap(),
            chance: chance.iter().map(|s| parse(s).unwrap()).collect(),
            delta: 0.5,
            ineq: vec![],
            eq: vec![],
            bounds: vec![Interval::new(lo, hi); n],
            epsilon: None,
            divergence_kind: DivergenceKind::Kl,
            chi: 0.0,
        }
    }

    #[test]
    fn big_m_examples() {
        let p = problem(&["x[0] - y[0]"], -1.0, 1.0, 1);
        let bm = derive_big_m(&p, &[vec![2.0]]).unwrap();
        assert!(bm.small_m <= -3.0 && bm.big_m >= -1.0);
        assert!((bm.small_m - (-3.1)).abs() < 1e-12);
        assert_eq!(bm.zeta, 1e-6);
        let p = problem(&["y[0]"], -1.0, 1.0, 1);
        let bm = derive_big_m(&p, &[vec![2.0], vec![-4.0]]).unwrap();
        assert_eq!((bm.small_m, bm.big_m), (-4.0, 2.0));
        let p = problem(&["exp(x[0])"], -1.0, 1.0, 1);
        let bm = derive_big_m(&p, &[vec![0.0]]).unwrap();
        assert!(bm.big_m >= 1f64.exp() && bm.small_m > 0.0);
        let lv = ConformalLevel::new(0.5, 1).unwrap();
        assert!(matches!(
            encode_mip(&p, &[vec![0.0]], &lv),
            Err(EncodeError::Unsatisfiable(_))
        ));
        let p = problem(&["ln(x[0]) - y[0]"], 0.0, 1.0, 1);
        assert!(matches!(
            derive_big_m(&p, &[vec![0.0]]),
            Err(EncodeError::BigM(_))
        ));
    }

    #[test]
    fn mip_structure() {
        let p = problem(&["x[0] - y[0]"], -1.0, 1.0, 1);
        let train = vec![vec![0.1], vec![0.2], vec![0.3]];
        let lv = ConformalLevel::new(0.5, 3).unwrap();
        assert_eq!(lv.rank, 2);
        let prog = encode_mip(&p, &train, &lv).unwrap();
        prog.check().unwrap();
        assert_eq!(prog.binaries().len(), 3);
        assert_eq!(prog.constraints.len(), 6);
        assert_eq!(prog.cardinality.len(), 1);
        assert_eq!(prog.cardinality[0].rhs, 2);
        assert_eq!(prog.blocks[0].drop_budget, 1);
    }

    #[test]
    fn indicator_rows_accept_consistent_binaries() {
        let p = problem(&["x[0] - y[0]"], -20.0, 20.0, 1);
        let train = vec![vec![1.0], vec![-0.5]];
        let lv = ConformalLevel::new(0.7, 2).unwrap();
        let prog = encode_mip(&p, &train, &lv).unwrap();
        // x = 0 gives scores [-1, 0.5].
        assert!(prog.verify(&[0.0, 1.0, 0.0]).max_violation < 1e-12);
        assert!(prog.verify(&[0.0, 0.0, 1.0]).max_violation > 0.4);
    }

    #[test]
    fn kkt_structure() {
        let p = problem(&["x[0] - y[0]"], -1.0, 1.0, 1);
        let train = vec![vec![0.1], vec![0.2]];
        let prog = encode_kkt(&p, &train, 0.75).unwrap();
        prog.check().unwrap();
        assert_eq!(prog.vars.len() - 1, 1 + 5 * 2);
        assert_eq!(prog.complementarity.len(), 4);
        assert!(prog.binaries().is_empty());
        assert!(encode_kkt(&p, &train, 1.5).is_err());
        assert!(encode_kkt(&p, &train, 0.0).is_err());
    }

    #[test]
    fn joint_structures() {
        let mut p = problem(&["x[0] - y[0]", "x[1] + y[0]", "x[0] - x[1]"], -1.0, 1.0, 2);
        p.delta = 0.2;
        let train: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
        let lv = union_level(&p, 50, false).unwrap();
        assert!((lv.delta - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(lv.rank, 48);
        let u = encode_joint_union(&p, &train, Outer::Mip, false).unwrap();
        assert_eq!(u.blocks.len(), 3);
        assert_eq!(u.binaries().len(), 150);
        let k4 = &train[..4];
        let lv4 = ConformalLevel::new(0.5, 4).unwrap();
        let m = encode_joint_max(&p, k4, &lv4, Outer::Mip).unwrap();
        m.check().unwrap();
        let link = m.blocks[0].max_link.as_ref().unwrap();
        assert_eq!(link.sigma.iter().flatten().count(), 12);
        assert_eq!(link.mu.len(), 4);
        assert_eq!(m.binaries().len(), 16);
        let single = problem(&["x[0]"], -1.0, 1.0, 1);
        assert!(encode_joint_max(&single, k4, &lv4, Outer::Mip).is_err());
        assert!(encode_mip(&p, k4, &lv4).is_err());
    }

    #[test]
    fn max_link_selects_the_maximum() {
        let p = problem(&["y[0] - 3 + 0*x[0]", "y[0] + 0*x[0]"], -1.0, 1.0, 1);
        // f1 = 2, f2 = 5 at y = 5.
        let lv = ConformalLevel::new(0.5, 1).unwrap();
        let prog = encode_joint_max(&p, &[vec![5.0]], &lv, Outer::Mip);
        // Every score is positive, so the indicator form is unsatisfiable.
        assert!(matches!(prog, Err(EncodeError::Unsatisfiable(_))));
        let p = problem(&["y[0] - 3 + x[0]", "y[0] + x[0]"], -10.0, 0.0, 1);
        let prog = encode_joint_max(&p, &[vec![5.0]], &lv, Outer::Mip).unwrap();
        let link = prog.blocks[0].max_link.clone().unwrap();
        let mut x = vec![0.0; prog.vars.len()];
        x[link.mu[0]] = 5.0;
        x[link.sigma[0][1]] = 1.0;
        let z = match &prog.blocks[0].vars {
            BlockVars::Mip { z, .. } => z[0],
            _ => unreachable!(),
        };
        x[z] = 0.0;
        let rank_relaxed = DetProgram {
            cardinality: prog.cardinality[..1].to_vec(),
            ..prog.clone()
        };
        assert!(rank_relaxed.verify(&x).max_violation < 1e-12);
        x[link.sigma[0][1]] = 0.0;
        x[link.sigma[0][0]] = 1.0;
        assert!(rank_relaxed.verify(&x).max_violation > 1.0);
    }
}
