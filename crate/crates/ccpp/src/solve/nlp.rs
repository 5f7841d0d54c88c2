//! Augmented-Lagrangian solver with a projected Newton inner loop for small
//! programs (spectral projected gradient for large ones), multistart from
//! Halton points, and the affine fast path.

use super::func::Nlp;
use super::lp::{solve_affine, LpOutcome};

/// Constraint violation accepted as feasible.
pub(crate) const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub(crate) struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
}

impl NlpResult {
    pub fn feasible(&self) -> bool {
        self.violation <= FEAS_TOL
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut k = 2u64;
    while out.len() < count {
        if out.iter().all(|p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `count` Halton points in the box, skipping the origin of the sequence.
pub(crate) fn halton(lo: &[f64], hi: &[f64], count: usize, offset: usize) -> Vec<Vec<f64>> {
    let ps = primes(lo.len());
    (0..count)
        .map(|k| {
            (0..lo.len())
                .map(|d| lo[d] + (hi[d] - lo[d]) * radical_inverse((k + offset + 1) as u64, ps[d]))
                .collect()
        })
        .collect()
}

/// Augmented Lagrangian `f + Σ ρ/2·max(0, c + λ/ρ)² + Σ (λc + ρ/2·c²)`.
struct Al<'a> {
    nlp: &'a Nlp,
    lambda: Vec<f64>,
    rho: f64,
}

impl Al<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.nlp.objective(x);
        for (k, r) in self.nlp.rows.iter().enumerate() {
            let c = r.value(x);
            if r.eq {
                v += self.lambda[k] * c + 0.5 * self.rho * c * c;
            } else {
                let t = (c + self.lambda[k] / self.rho).max(0.0);
                v += 0.5 * self.rho * t * t - 0.5 * self.lambda[k] * self.lambda[k] / self.rho;
            }
        }
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn grad(&self, x: &mut [f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        self.nlp.obj.add_grad(x, self.nlp.obj_scale, g);
        for (k, r) in self.nlp.rows.iter().enumerate() {
            let c = r.value(x);
            let w = if r.eq {
                self.lambda[k] + self.rho * c
            } else {
                (self.lambda[k] + self.rho * c).max(0.0)
            };
            if w != 0.0 && w.is_finite() {
                r.f.add_grad(x, w * r.scale, g);
            }
        }
    }

    /// Generalized Hessian: curvature of the objective and of rows with a
    /// positive multiplier estimate, plus `ρ·∇c∇cᵀ` for active rows.
    fn hess(&self, x: &mut [f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let mut h = vec![vec![0.0; n]; n];
        self.nlp.obj.add_hess(x, self.nlp.obj_scale, &mut h);
        let mut gc = vec![0.0; n];
        for (k, r) in self.nlp.rows.iter().enumerate() {
            let c = r.value(x);
            let w = self.lambda[k] + self.rho * c;
            if !r.eq && w <= 0.0 || !w.is_finite() {
                continue;
            }
            r.f.add_hess(x, w * r.scale, &mut h);
            gc.iter_mut().for_each(|v| *v = 0.0);
            r.f.add_grad(x, r.scale, &mut gc);
            for i in 0..n {
                if gc[i] != 0.0 {
                    for j in 0..n {
                        h[i][j] += self.rho * gc[i] * gc[j];
                    }
                }
            }
        }
        h
    }
}

/// Programs with at most this many variables use the Newton inner loop.
const NEWTON_DIM: usize = 40;

/// Solves `(a + μI) d = b` by Cholesky, raising `μ` until the factorization
/// succeeds.
fn regularized_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-12);
    let mut mu = 0.0;
    for _ in 0..20 {
        let mut l = vec![vec![0.0; n]; n];
        let mut ok = true;
        'fact: for i in 0..n {
            for j in 0..=i {
                let mut s = a[i][j] + if i == j { mu } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 1e-14 * scale) {
                        ok = false;
                        break 'fact;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        if ok {
            let mut y = b.to_vec();
            for i in 0..n {
                for k in 0..i {
                    y[i] -= l[i][k] * y[k];
                }
                y[i] /= l[i][i];
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    y[i] -= l[k][i] * y[k];
                }
                y[i] /= l[i][i];
            }
            return Some(y);
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 100.0 };
    }
    None
}

/// Projected Newton on the augmented Lagrangian: Newton steps in the free
/// variables, bound-blocked variables held, projected Armijo search. Falls
/// back to [`spg`] when no Newton step makes progress.
fn newton(al: &Al, x: &mut Vec<f64>, max_iter: usize, tol: f64) {
    let n = x.len();
    let nlp = al.nlp;
    let mut g = vec![0.0; n];
    let mut xn = vec![0.0; n];
    for _ in 0..max_iter {
        al.grad(x, &mut g);
        let pg = pg_norm(nlp, x, &g);
        if pg <= tol {
            return;
        }
        let f = al.value(x);
        let eps = pg.min(1e-6);
        let free: Vec<usize> = (0..n)
            .filter(|&i| !(x[i] <= nlp.lo[i] + eps && g[i] > 0.0 || x[i] >= nlp.hi[i] - eps && g[i] < 0.0))
            .collect();
        let h = al.hess(x);
        let mut d = vec![0.0; n];
        if !free.is_empty() {
            let hf: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| h[i][j]).collect()).collect();
            let rhs: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            if let Some(df) = regularized_solve(&hf, &rhs) {
                for (a, &i) in free.iter().enumerate() {
                    d[i] = df[a];
                }
            }
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut gd = 0.0;
            for i in 0..n {
                xn[i] = (x[i] + t * d[i]).clamp(nlp.lo[i], nlp.hi[i]);
                gd += g[i] * (xn[i] - x[i]);
            }
            if gd < 0.0 && al.value(&xn) <= f + 1e-4 * gd {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            spg(al, x, 50, tol);
            continue;
        }
        let moved = (0..n).map(|i| (xn[i] - x[i]).abs()).fold(0.0, f64::max);
        x.copy_from_slice(&xn);
        if moved <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return;
        }
    }
}

fn pg_norm(nlp: &Nlp, x: &[f64], g: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(nlp.lo[i], nlp.hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

/// Nonmonotone spectral projected gradient on the augmented Lagrangian.
fn spg(al: &Al, x: &mut Vec<f64>, max_iter: usize, tol: f64) {
    let n = x.len();
    let nlp = al.nlp;
    let mut g = vec![0.0; n];
    al.grad(x, &mut g);
    let mut f = al.value(x);
    let mut hist = vec![f; 10];
    let mut step = {
        let pg = pg_norm(nlp, x, &g);
        if pg > 0.0 {
            (1.0 / pg).clamp(1e-10, 1e10)
        } else {
            1.0
        }
    };
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut d = vec![0.0; n];
    for k in 0..max_iter {
        if pg_norm(nlp, x, &g) <= tol {
            break;
        }
        for i in 0..n {
            d[i] = (x[i] - step * g[i]).clamp(nlp.lo[i], nlp.hi[i]) - x[i];
        }
        let gd: f64 = (0..n).map(|i| g[i] * d[i]).sum();
        if gd >= 0.0 {
            break;
        }
        let fmax = hist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut fn_;
        let mut accepted = false;
        for _ in 0..50 {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            fn_ = al.value(&xn);
            if fn_ <= fmax + 1e-4 * t * gd {
                f = fn_;
                accepted = true;
                break;
            }
            // Safeguarded quadratic backtracking.
            let tq = -0.5 * t * t * gd / (fn_ - f - t * gd);
            t = if tq.is_finite() && tq >= 0.1 * t && tq <= 0.9 * t {
                tq
            } else {
                0.5 * t
            };
        }
        if !accepted {
            break;
        }
        al.grad(&mut xn, &mut gn);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = xn[i] - x[i];
            ss += s * s;
            sy += s * (gn[i] - g[i]);
        }
        std::mem::swap(x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        hist[k % 10] = f;
        step = if sy <= 0.0 { 1e10 } else { (ss / sy).clamp(1e-10, 1e10) };
        if ss.sqrt() <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
}

/// Augmented-Lagrangian local solve from `start`.
fn al_solve(nlp: &Nlp, start: &[f64]) -> NlpResult {
    let mut x = start.to_vec();
    nlp.project(&mut x);
    let mut al = Al {
        nlp,
        lambda: vec![0.0; nlp.rows.len()],
        rho: 10.0,
    };
    let mut prev_viol = f64::INFINITY;
    let mut prev_obj = f64::INFINITY;
    for outer in 0..60 {
        let tol = (1e-4 / (1.0 + outer as f64).powi(3)).max(1e-10);
        if x.len() <= NEWTON_DIM {
            newton(&al, &mut x, 200, tol);
        } else {
            spg(&al, &mut x, 2000, tol);
        }
        let viol = nlp.violation(&x);
        let obj = nlp.objective(&x);
        for (k, r) in nlp.rows.iter().enumerate() {
            let c = r.value(&x);
            al.lambda[k] = if r.eq {
                al.lambda[k] + al.rho * c
            } else {
                (al.lambda[k] + al.rho * c).max(0.0)
            };
            if !al.lambda[k].is_finite() {
                al.lambda[k] = 0.0;
            }
        }
        let settled = (obj - prev_obj).abs() <= 1e-10 * (1.0 + obj.abs());
        if viol <= 1e-10 && settled && outer > 0 {
            break;
        }
        if viol > 0.25 * prev_viol {
            al.rho = (al.rho * 10.0).min(1e12);
        }
        prev_viol = viol;
        prev_obj = obj;
    }
    NlpResult {
        objective: nlp.objective(&x),
        violation: nlp.violation(&x),
        x,
    }
}

fn better(a: &NlpResult, b: &NlpResult) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective < b.objective,
        (false, false) => a.violation < b.violation,
    }
}

/// Best local solution over the given starts; `None` when the affine path
/// proves infeasibility or every start produced a non-finite point.
pub(crate) fn solve_nlp(nlp: &Nlp, starts: &[Vec<f64>]) -> Option<NlpResult> {
    if nlp.is_affine() {
        return match solve_affine(nlp) {
            LpOutcome::Optimal(x) => Some(NlpResult {
                objective: nlp.objective(&x),
                violation: nlp.violation(&x),
                x,
            }),
            LpOutcome::Infeasible => None,
        };
    }
    let mut best: Option<NlpResult> = None;
    for s in starts {
        let r = al_solve(nlp, s);
        if !r.objective.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if best.as_ref().map_or(true, |b| better(&r, b)) {
            best = Some(r);
        }
    }
    best
}
