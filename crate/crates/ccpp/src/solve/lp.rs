//! Dense two-phase simplex for box-bounded linear programs.

use super::func::Nlp;

const EPS: f64 = 1e-10;

pub(crate) enum LpOutcome {
    Optimal(Vec<f64>),
    Infeasible,
}

/// `Σ terms·x + constant ≤ 0`, or `= 0` when `eq`.
struct LinRow {
    terms: Vec<(usize, f64)>,
    constant: f64,
    eq: bool,
}

/// Solves an affine [`Nlp`]. Panics if a function is not affine.
pub(crate) fn solve_affine(nlp: &Nlp) -> LpOutcome {
    let n = nlp.dim();
    let obj = nlp.obj.affine.as_ref().expect("affine objective");
    let mut c = vec![0.0; n];
    for &(i, v) in &obj.terms {
        c[i] += nlp.obj_scale * v;
    }
    let rows: Vec<LinRow> = nlp
        .rows
        .iter()
        .map(|r| {
            let a = r.f.affine.as_ref().expect("affine row");
            LinRow {
                terms: a.terms.iter().map(|&(i, v)| (i, r.scale * v)).collect(),
                constant: r.scale * a.constant + r.offset,
                eq: r.eq,
            }
        })
        .collect();
    solve_lp(&c, &rows, &nlp.lo, &nlp.hi)
}

struct Tableau {
    /// `(m + 1) × (cols + 1)`; the last row holds reduced costs and the last
    /// column right-hand sides.
    t: Vec<f64>,
    m: usize,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.t[pr * w + pc];
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        self.t[pr * w + pc] = 1.0;
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f == 0.0 {
                continue;
            }
            for c in 0..w {
                let v = self.t[pr * w + c];
                if v != 0.0 {
                    self.t[r * w + c] -= f * v;
                }
            }
            self.t[r * w + pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations over columns `< allowed`. Returns false on
    /// iteration exhaustion.
    fn optimize(&mut self, allowed: usize) -> bool {
        let bland_after = 50 * (self.m + allowed) + 100;
        for iter in 0..(400 * (self.m + allowed) + 1000) {
            let bland = iter > bland_after;
            let mut enter = None;
            let mut best = -EPS;
            for c in 0..allowed {
                let d = self.at(self.m, c);
                if d < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = enter else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => {
                            ratio < lv - 1e-12 || (ratio <= lv + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                // Bounded box: an unbounded ray cannot occur; stop defensively.
                None => return true,
                Some((pr, _)) => self.pivot(pr, pc),
            }
        }
        false
    }
}

fn solve_lp(c: &[f64], rows: &[LinRow], lo: &[f64], hi: &[f64]) -> LpOutcome {
    let n = c.len();
    // Structural columns for variables with a nondegenerate range.
    let mut col = vec![usize::MAX; n];
    let mut free = Vec::new();
    for j in 0..n {
        if hi[j] - lo[j] > 1e-12 {
            col[j] = free.len();
            free.push(j);
        }
    }
    let nf = free.len();
    let u: Vec<f64> = free.iter().map(|&j| hi[j] - lo[j]).collect();

    // Rows as `a·t (≤|=) b` in shifted variables t = x − lo.
    let mut dense: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for r in rows {
        let mut a = vec![0.0; nf];
        let mut b = -r.constant;
        for &(j, v) in &r.terms {
            b -= v * lo[j];
            if col[j] != usize::MAX {
                a[col[j]] += v;
            }
        }
        let (mut amax, mut amin) = (0.0, 0.0);
        for k in 0..nf {
            let t = a[k] * u[k];
            if t > 0.0 {
                amax += t;
            } else {
                amin += t;
            }
        }
        let tol = 1e-9 * (1.0 + b.abs());
        if amin > b + tol || (r.eq && amax < b - tol) {
            return LpOutcome::Infeasible;
        }
        if !r.eq && amax <= b + 1e-12 {
            continue;
        }
        if a.iter().all(|v| *v == 0.0) {
            continue;
        }
        dense.push((a, b, r.eq));
    }
    for k in 0..nf {
        let mut a = vec![0.0; nf];
        a[k] = 1.0;
        dense.push((a, u[k], false));
    }

    let m = dense.len();
    let n_ineq = dense.iter().filter(|r| !r.2).count();
    let n_art = dense.iter().filter(|r| r.2 || r.1 < 0.0).count();
    let cols = nf + n_ineq + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        t: vec![0.0; (m + 1) * w],
        m,
        cols,
        basis: vec![0; m],
    };
    let (mut slack, mut art) = (nf, nf + n_ineq);
    let mut art_rows = Vec::new();
    for (r, (a, b, eq)) in dense.iter().enumerate() {
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        for k in 0..nf {
            tab.t[r * w + k] = sign * a[k];
        }
        tab.t[r * w + cols] = sign * b;
        if !eq {
            tab.t[r * w + slack] = sign;
            if sign > 0.0 {
                tab.basis[r] = slack;
            }
            slack += 1;
        }
        if *eq || sign < 0.0 {
            tab.t[r * w + art] = 1.0;
            tab.basis[r] = art;
            art += 1;
            art_rows.push(r);
        }
    }

    if n_art > 0 {
        for &r in &art_rows {
            for c in 0..w {
                let v = tab.t[r * w + c];
                tab.t[m * w + c] -= v;
            }
        }
        for c in nf + n_ineq..cols {
            tab.t[m * w + c] = 0.0;
        }
        tab.optimize(cols);
        if -tab.t[m * w + cols] > 1e-9 * (1.0 + dense.iter().map(|r| r.1.abs()).fold(0.0, f64::max)) {
            return LpOutcome::Infeasible;
        }
        // Drive remaining artificials out of the basis.
        for r in 0..m {
            if tab.basis[r] >= nf + n_ineq {
                if let Some(pc) = (0..nf + n_ineq).find(|&c| tab.at(r, c).abs() > 1e-9) {
                    tab.pivot(r, pc);
                }
            }
        }
    }

    // Phase 2 reduced costs.
    for c in 0..w {
        tab.t[m * w + c] = 0.0;
    }
    for k in 0..nf {
        tab.t[m * w + k] = c[free[k]];
    }
    for r in 0..m {
        let bcol = tab.basis[r];
        let cb = if bcol < nf { c[free[bcol]] } else { 0.0 };
        if cb != 0.0 {
            for cc in 0..w {
                let v = tab.t[r * w + cc];
                tab.t[m * w + cc] -= cb * v;
            }
        }
    }
    tab.optimize(nf + n_ineq);

    let mut x = lo.to_vec();
    for r in 0..m {
        let bcol = tab.basis[r];
        if bcol < nf {
            let j = free[bcol];
            x[j] = (lo[j] + tab.rhs(r)).clamp(lo[j], hi[j]);
        }
    }
    LpOutcome::Optimal(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::solve::func::{Func, Row};

    fn nlp(obj: &str, rows: &[(&str, bool)], lo: Vec<f64>, hi: Vec<f64>) -> Nlp {
        Nlp {
            obj: Func::new(&parse(obj).unwrap()).unwrap(),
            obj_scale: 1.0,
            rows: rows
                .iter()
                .map(|(e, eq)| {
                    let f = Func::new(&parse(e).unwrap()).unwrap();
                    if *eq {
                        Row::eq(f, 0.0)
                    } else {
                        Row::le(f, 0.0)
                    }
                })
                .collect(),
            lo,
            hi,
        }
    }

    fn optimal(o: LpOutcome) -> Vec<f64> {
        match o {
            LpOutcome::Optimal(x) => x,
            LpOutcome::Infeasible => panic!("infeasible"),
        }
    }

    #[test]
    fn small_lps() {
        // max x + y s.t. x + 2y ≤ 4, 3x + y ≤ 6 → (1.6, 1.2).
        let p = nlp(
            "-x[0] - x[1]",
            &[("x[0] + 2*x[1] - 4", false), ("3*x[0] + x[1] - 6", false)],
            vec![0.0, 0.0],
            vec![10.0, 10.0],
        );
        let x = optimal(solve_affine(&p));
        assert!((x[0] - 1.6).abs() < 1e-9 && (x[1] - 1.2).abs() < 1e-9);
        // Equality and negative bounds.
        let p = nlp("x[0] + x[1]", &[("x[0] - x[1] - 1", true)], vec![-5.0, -5.0], vec![5.0, 5.0]);
        let x = optimal(solve_affine(&p));
        assert!((x[0] + 4.0).abs() < 1e-9 && (x[1] + 5.0).abs() < 1e-9);
        // x ≥ 1 written as 1 − x ≤ 0.
        let p = nlp("x[0]", &[("1 - x[0]", false)], vec![-5.0], vec![5.0]);
        assert!((optimal(solve_affine(&p))[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lps() {
        let p = nlp("x[0]", &[("x[0] + 1", false), ("1 - x[0]", false)], vec![-5.0], vec![5.0]);
        assert!(matches!(solve_affine(&p), LpOutcome::Infeasible));
        let p = nlp(
            "x[0]",
            &[("x[0] + x[1] - 1", false), ("3 - x[0] - x[1]", false)],
            vec![0.0, 0.0],
            vec![5.0, 5.0],
        );
        assert!(matches!(solve_affine(&p), LpOutcome::Infeasible));
    }

    #[test]
    fn degenerate_lp() {
        // Many rows through the optimum.
        let rows: Vec<(String, bool)> = (1..30)
            .map(|k| (format!("{k}*x[0] + x[1] - {k}"), false))
            .collect();
        let refs: Vec<(&str, bool)> = rows.iter().map(|(s, e)| (s.as_str(), *e)).collect();
        let p = nlp("-x[0] - x[1]", &refs, vec![0.0, 0.0], vec![2.0, 2.0]);
        let x = optimal(solve_affine(&p));
        assert!((x[0] + x[1] - 1.0).abs() < 1e-9, "{x:?}");
        assert!(p.violation(&x) < 1e-9);
    }
}
