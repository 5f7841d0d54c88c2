//! Robust conformal levels under f-divergence distribution shift.
//!
//! `v(β)` is the smallest probability a shifted distribution within the
//! divergence ball can assign to an event of nominal probability `β`;
//! `v⁻¹` is its generalized inverse. The robust failure level composes both:
//! `δₙ = 1 − v((1 + 1/L)·v⁻¹(1 − δ))` and `δ̃ = 1 − v⁻¹(1 − δₙ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantile::ceil_tol;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("count {count} below the minimal robust size {minimal:?}")]
    BelowMinimalSize { count: usize, minimal: Option<usize> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// `φ(z) = z ln z`.
    #[default]
    Kl,
    /// `φ(z) = |z − 1| / 2`.
    Tv,
}

/// Divergence ball of radius `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub epsilon: f64,
}

impl Divergence {
    pub fn new(kind: DivergenceKind, epsilon: f64) -> Divergence {
        Divergence { kind, epsilon }
    }

    /// `φ` of the divergence.
    pub fn phi(&self, z: f64) -> f64 {
        match self.kind {
            DivergenceKind::Kl => {
                if z == 0.0 {
                    0.0
                } else {
                    z * z.ln()
                }
            }
            DivergenceKind::Tv => 0.5 * (z - 1.0).abs(),
        }
    }

    /// `lim φ(t)/t` as `t → ∞`, the perspective of `φ` at `β = 0`.
    fn recession(&self) -> f64 {
        match self.kind {
            DivergenceKind::Kl => f64::INFINITY,
            DivergenceKind::Tv => 0.5,
        }
    }

    /// `βφ(z/β) + (1−β)φ((1−z)/(1−β))`, the divergence between two-point
    /// laws, with the perspective limit `z·lim φ(t)/t` at `β ∈ {0, 1}`.
    pub fn two_point(&self, z: f64, beta: f64) -> f64 {
        let persp = |w: f64, b: f64| {
            if b > 0.0 {
                b * self.phi(w / b)
            } else if w == 0.0 {
                0.0
            } else {
                w * self.recession()
            }
        };
        persp(z, beta) + persp(1.0 - z, 1.0 - beta)
    }
}

/// Robust calibration level for `count` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLevel {
    pub delta: f64,
    pub count: usize,
    pub divergence: Divergence,
    pub delta_n: f64,
    pub delta_tilde: f64,
    pub alpha_tilde: f64,
}

fn kl_bernoulli(z: f64, beta: f64) -> f64 {
    Divergence::new(DivergenceKind::Kl, 0.0).two_point(z, beta)
}

/// `v(β) = inf{z ∈ [0,1] : two_point(z, β) ≤ ε}`.
pub fn v(beta: f64, div: &Divergence) -> f64 {
    let beta = beta.clamp(0.0, 1.0);
    if div.epsilon == 0.0 {
        return beta;
    }
    match div.kind {
        DivergenceKind::Tv => (beta - div.epsilon).max(0.0),
        DivergenceKind::Kl => {
            if beta == 0.0 {
                return 0.0;
            }
            if beta == 1.0 {
                return 1.0;
            }
            if -(1.0 - beta).ln() <= div.epsilon {
                return 0.0;
            }
            // KL(z‖β) decreases on [0, β] from −ln(1−β) to 0.
            let (mut lo, mut hi) = (0.0, beta);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if kl_bernoulli(mid, beta) <= div.epsilon {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    }
}

/// `v` by bisection on the generic two-point constraint, for any kind.
pub fn v_bisect(beta: f64, div: &Divergence) -> f64 {
    let beta = beta.clamp(0.0, 1.0);
    if div.two_point(0.0, beta) <= div.epsilon {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, beta);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if div.two_point(mid, beta) <= div.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn sup_bisect(tau: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(1.0) <= tau {
        return 1.0;
    }
    let (mut lo, mut hi) = (tau.clamp(0.0, 1.0), 1.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `v⁻¹(τ) = sup{β ∈ [0,1] : v(β) ≤ τ}`.
pub fn v_inv(tau: f64, div: &Divergence) -> f64 {
    if div.epsilon == 0.0 {
        return tau.clamp(0.0, 1.0);
    }
    match div.kind {
        DivergenceKind::Tv => (tau + div.epsilon).min(1.0),
        DivergenceKind::Kl => sup_bisect(tau, |b| v(b, div)),
    }
}

/// `v⁻¹` by outer bisection over [`v_bisect`], for any kind.
pub fn v_inv_bisect(tau: f64, div: &Divergence) -> f64 {
    sup_bisect(tau, |b| v_bisect(b, div))
}

/// Smallest count satisfying `count ≥ v⁻¹(1−δ) / (1 − v⁻¹(1−δ))`, or `None`
/// when the shift is too large for any count.
pub fn min_robust_size(delta: f64, div: &Divergence) -> Option<usize> {
    let vi = v_inv(1.0 - delta, div);
    if vi >= 1.0 {
        return None;
    }
    Some(ceil_tol(vi / (1.0 - vi)).max(1))
}

/// Robust level `δ̃(count)`.
pub fn delta_tilde(delta: f64, count: usize, div: &Divergence) -> Result<RobustLevel, RobustError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RobustError::InvalidParameter(format!("delta = {delta}")));
    }
    if !(div.epsilon >= 0.0) || !div.epsilon.is_finite() {
        return Err(RobustError::InvalidParameter(format!(
            "epsilon = {}",
            div.epsilon
        )));
    }
    if count == 0 {
        return Err(RobustError::BelowMinimalSize {
            count,
            minimal: min_robust_size(delta, div),
        });
    }
    let vi = v_inv(1.0 - delta, div);
    let arg = (1.0 + 1.0 / count as f64) * vi;
    if arg > 1.0 + 1e-12 {
        return Err(RobustError::BelowMinimalSize {
            count,
            minimal: min_robust_size(delta, div),
        });
    }
    let delta_n = 1.0 - v(arg.min(1.0), div);
    let alpha_tilde = v_inv(1.0 - delta_n, div);
    Ok(RobustLevel {
        delta,
        count,
        divergence: *div,
        delta_n,
        delta_tilde: 1.0 - alpha_tilde,
        alpha_tilde,
    })
}

/// KL divergence between diagonal Gaussians with the shifted distribution
/// first: per component `½(σ₂/σ₁ − 1 + (μ₁−μ₂)²/σ₁ − ln(σ₂/σ₁))`, where the
/// `σ` are variances.
pub fn gaussian_kl(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64, RobustError> {
    let n = mu1.len();
    if var1.len() != n || mu2.len() != n || var2.len() != n {
        return Err(RobustError::InvalidParameter("dimension mismatch".into()));
    }
    if var1.iter().chain(var2).any(|v| !(*v > 0.0)) {
        return Err(RobustError::InvalidParameter("nonpositive variance".into()));
    }
    Ok((0..n)
        .map(|i| {
            let r = var2[i] / var1[i];
            let d = mu1[i] - mu2[i];
            0.5 * (r - 1.0 + d * d / var1[i] - r.ln())
        })
        .sum())
}
