//! Empirical quantiles, the pinball-loss characterization, conformal
//! certificates and coverage statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::problem::CcoProblem;
use crate::robust::{delta_tilde, RobustError, RobustLevel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantileError {
    #[error("level infeasible: rank {rank} exceeds count {count}")]
    LevelInfeasible { rank: usize, count: usize },
    #[error("invalid level parameter: {0}")]
    InvalidLevel(String),
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("score list is empty")]
    Empty,
    #[error("score is NaN")]
    NanScore,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Robust(#[from] RobustError),
}

/// Ceiling that absorbs floating noise below an integer (`ceil(v − 1e-9)`).
pub fn ceil_tol(v: f64) -> usize {
    (v - 1e-9).ceil().max(0.0) as usize
}

/// Floor that absorbs floating noise below an integer (`floor(v + 1e-9)`).
pub fn floor_tol(v: f64) -> usize {
    (v + 1e-9).floor().max(0.0) as usize
}

/// Exact ceiling of `count·alpha` for the double `alpha`, and whether the
/// product is an integer.
pub fn exact_ceil_mul(count: usize, alpha: f64) -> (usize, bool) {
    let k = count as f64;
    let r = (k * alpha).round();
    let residual = k.mul_add(alpha, -r);
    if residual == 0.0 {
        (r as usize, true)
    } else if residual > 0.0 {
        (r as usize + 1, false)
    } else {
        (r as usize, false)
    }
}

/// Quantile level `α = (1 + 1/count)(1 − δ)` with rank `p = ⌈(count+1)(1−δ)⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalLevel {
    pub delta: f64,
    pub count: usize,
    pub alpha: f64,
    pub rank: usize,
}

impl ConformalLevel {
    pub fn new(delta: f64, count: usize) -> Result<Self, QuantileError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(QuantileError::InvalidLevel(format!("delta = {delta}")));
        }
        if count == 0 {
            return Err(QuantileError::InvalidLevel("count = 0".into()));
        }
        let rank = ceil_tol((count as f64 + 1.0) * (1.0 - delta)).max(1);
        let alpha = (1.0 + 1.0 / count as f64) * (1.0 - delta);
        Self::checked(delta, count, alpha, rank)
    }

    /// Level with a prescribed `α`; the rank is the exact `⌈count·α⌉`.
    pub fn from_alpha(alpha: f64, count: usize) -> Result<Self, QuantileError> {
        if !(alpha > 0.0 && alpha <= 1.0) || count == 0 {
            return Err(QuantileError::InvalidLevel(format!("alpha = {alpha}")));
        }
        let (rank, _) = exact_ceil_mul(count, alpha);
        let delta = 1.0 - alpha * count as f64 / (count as f64 + 1.0);
        Self::checked(delta, count, alpha, rank.max(1))
    }

    /// Level `α̃ = 1 − δ̃(count)` of a robust configuration.
    pub fn robust(level: &RobustLevel) -> Result<Self, QuantileError> {
        let alpha = level.alpha_tilde;
        let rank = ceil_tol(level.count as f64 * alpha).max(1);
        Self::checked(level.delta, level.count, alpha, rank)
    }

    fn checked(delta: f64, count: usize, alpha: f64, rank: usize) -> Result<Self, QuantileError> {
        if rank > count {
            return Err(QuantileError::LevelInfeasible { rank, count });
        }
        Ok(ConformalLevel {
            delta,
            count,
            alpha,
            rank,
        })
    }
}

fn check_scores(scores: &[f64]) -> Result<(), QuantileError> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(QuantileError::NanScore);
    }
    Ok(())
}

/// The `k`-th smallest value (1-based).
pub fn kth_smallest(scores: &[f64], k: usize) -> f64 {
    let mut v = scores.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// The `rank`-th smallest score.
pub fn empirical_quantile(scores: &[f64], level: &ConformalLevel) -> Result<f64, QuantileError> {
    if scores.len() != level.count {
        return Err(QuantileError::LengthMismatch {
            expected: level.count,
            got: scores.len(),
        });
    }
    check_scores(scores)?;
    Ok(kth_smallest(scores, level.rank))
}

/// Pinball loss `Σ ρ_α(s − q)` with `ρ_α(u) = u(α − 1(u < 0))`.
pub fn pinball_loss(scores: &[f64], alpha: f64, q: f64) -> f64 {
    scores
        .iter()
        .map(|s| {
            let u = s - q;
            u * (alpha - if u < 0.0 { 1.0 } else { 0.0 })
        })
        .sum()
}

/// Minimizer of the pinball loss. When `αK` is an integer the minimizers form
/// an interval and its upper endpoint is returned.
pub fn pinball_quantile(scores: &[f64], alpha: f64) -> Result<f64, QuantileError> {
    if scores.is_empty() {
        return Err(QuantileError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(QuantileError::InvalidLevel(format!("alpha = {alpha}")));
    }
    check_scores(scores)?;
    let k = scores.len();
    let (c, integral) = exact_ceil_mul(k, alpha);
    let idx = if integral { (c + 1).min(k) } else { c.max(1) };
    Ok(kth_smallest(scores, idx))
}

/// Binomial upper tail `P(Bin(n, p) ≥ l)`, summed in log space.
pub fn binomial_tail(n: usize, p: f64, l: usize) -> f64 {
    if l == 0 {
        return 1.0;
    }
    if l > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_c = 0.0;
    let mut terms = Vec::with_capacity(n + 1 - l);
    for j in 1..=n {
        log_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        if j >= l {
            terms.push(log_c + j as f64 * lp + (n - j) as f64 * lq);
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    (m + s.ln()).exp().clamp(0.0, 1.0)
}

/// How joint chance constraints are certified and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// Per-constraint levels `δ/s`, bound `C̄ = maxⱼ Cⱼ`.
    #[default]
    Union,
    /// Single level on `maxⱼ fⱼ`.
    Max,
}

/// Conformal bound for a candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `C(x)`; for joint union mode this is `maxⱼ Cⱼ`.
    pub bound: f64,
    pub level: ConformalLevel,
    /// Per-constraint bounds `Cⱼ` (one entry for individual constraints).
    pub per_constraint: Vec<f64>,
    /// Calibration scores (per sample maximum over constraints when `s > 1`).
    pub scores: Vec<f64>,
    /// `l = L + 1 − p`, equal to `⌊(L+1)δ⌋` for the vanilla level.
    pub beta_l: usize,
    /// `Σ_{j=l}^{L} C(L,j) δʲ(1−δ)^{L−j}`.
    pub meets_coverage_prob: f64,
    pub robust: Option<RobustLevel>,
}

/// Options for [`certify`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CertifyOptions {
    pub robust: bool,
    pub joint: JointMode,
}

fn calibration_level(
    delta: f64,
    count: usize,
    p: &CcoProblem,
    robust: bool,
) -> Result<(ConformalLevel, Option<RobustLevel>), QuantileError> {
    if robust {
        let rl = delta_tilde(delta, count, &p.divergence())?;
        Ok((ConformalLevel::robust(&rl)?, Some(rl)))
    } else {
        Ok((ConformalLevel::new(delta, count)?, None))
    }
}

/// Certifies `x` on calibration rows. The caller guarantees `x` was computed
/// without access to `calib`.
pub fn certify(
    x: &[f64],
    p: &CcoProblem,
    calib: &[Vec<f64>],
    opts: CertifyOptions,
) -> Result<Certificate, QuantileError> {
    let count = calib.len();
    let per = p.chance_scores(x, calib)?;
    let s = per.len();
    let max_scores: Vec<f64> = (0..count)
        .map(|i| per.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (level, robust, per_constraint, bound) = if s > 1 && opts.joint == JointMode::Union {
        let (level, robust) = calibration_level(p.delta / s as f64, count, p, opts.robust)?;
        let cs = per
            .iter()
            .map(|sc| empirical_quantile(sc, &level))
            .collect::<Result<Vec<_>, _>>()?;
        let bound = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (level, robust, cs, bound)
    } else {
        let (level, robust) = calibration_level(p.delta, count, p, opts.robust)?;
        let c = empirical_quantile(&max_scores, &level)?;
        let cs = if s == 1 {
            vec![c]
        } else {
            per.iter()
                .map(|sc| empirical_quantile(sc, &level))
                .collect::<Result<Vec<_>, _>>()?
        };
        (level, robust, cs, c)
    };
    let beta_l = count + 1 - level.rank;
    let delta_target = if s > 1 && opts.joint == JointMode::Union {
        p.delta / s as f64
    } else {
        p.delta
    };
    Ok(Certificate {
        bound,
        level,
        per_constraint,
        scores: max_scores,
        beta_l,
        meets_coverage_prob: binomial_tail(count, delta_target, beta_l),
        robust,
    })
}

/// Fraction of rows whose scores are all at most `threshold`. Rows whose
/// evaluation fails count as violations.
pub fn empirical_coverage(x: &[f64], p: &CcoProblem, rows: &[Vec<f64>], threshold: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let tapes = p.chance_tapes();
    let covered = rows
        .iter()
        .filter(|y| {
            tapes.iter().all(|t| {
                let v = t.eval(x, y);
                v.is_finite() && v <= threshold
            })
        })
        .count();
    covered as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_examples() {
        let lv = ConformalLevel::new(0.5, 3).unwrap();
        assert_eq!(lv.rank, 2);
        assert_eq!(empirical_quantile(&[0.5, 0.1, 0.3], &lv).unwrap(), 0.3);
        let lv = ConformalLevel::new(0.05, 19).unwrap();
        assert_eq!(lv.rank, 19);
        let s: Vec<f64> = (1..=19).map(|v| v as f64).collect();
        assert_eq!(empirical_quantile(&s, &lv).unwrap(), 19.0);
        let lv = ConformalLevel::new(0.3, 7).unwrap();
        assert_eq!(empirical_quantile(&[2.5; 7], &lv).unwrap(), 2.5);
        assert!(matches!(
            empirical_quantile(&[1.0], &lv),
            Err(QuantileError::LengthMismatch { .. })
        ));
        assert!(matches!(
            empirical_quantile(&[f64::NAN; 7], &lv),
            Err(QuantileError::NanScore)
        ));
    }

    #[test]
    fn infeasible_levels() {
        assert!(matches!(
            ConformalLevel::new(0.05, 10),
            Err(QuantileError::LevelInfeasible { rank: 11, count: 10 })
        ));
        // Decimal semantics: 5·0.8 is 4 even though 0.8 is stored above 0.8.
        assert_eq!(ConformalLevel::new(0.2, 4).unwrap().rank, 4);
        assert_eq!(ConformalLevel::new(0.05, 50).unwrap().rank, 49);
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.0);
        assert_eq!(pinball_quantile(&[1.0, 2.0, 3.0], 2.0 / 3.0).unwrap(), 2.0);
        assert_eq!(pinball_quantile(&[7.5], 0.3).unwrap(), 7.5);
        assert!(pinball_quantile(&[], 0.3).is_err());
    }

    #[test]
    fn pinball_result_minimizes_loss_on_grid() {
        let scores = [0.3, -1.2, 4.0, 2.2, 0.3, 5.1, -0.7];
        for alpha in [0.1, 0.25, 0.5, 3.0 / 7.0, 0.8, 0.95] {
            let q = pinball_quantile(&scores, alpha).unwrap();
            let best = pinball_loss(&scores, alpha, q);
            for k in 0..=2000 {
                let g = -2.0 + 8.0 * k as f64 / 2000.0;
                assert!(pinball_loss(&scores, alpha, g) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn exact_products() {
        assert_eq!(exact_ceil_mul(4, 0.5), (2, true));
        assert_eq!(exact_ceil_mul(3, 2.0 / 3.0), (2, false));
        assert_eq!(exact_ceil_mul(10, 0.95), (10, false));
        assert_eq!(exact_ceil_mul(5, 0.8), (5, false));
    }

    #[test]
    fn binomial_tail_values() {
        assert!((binomial_tail(19, 0.05, 1) - (1.0 - 0.95f64.powi(19))).abs() < 1e-12);
        assert_eq!(binomial_tail(10, 0.3, 0), 1.0);
        assert_eq!(binomial_tail(10, 0.3, 11), 0.0);
        // Large n stays finite.
        let t = binomial_tail(10_000, 0.05, 500);
        assert!(t > 0.4 && t < 0.6);
    }
}
