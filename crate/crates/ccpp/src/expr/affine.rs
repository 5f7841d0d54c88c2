//! Affine-form detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Expr;

/// `constant + Σ coeffs[i]·x[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineForm {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl AffineForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Rebuilds an expression evaluating to the same affine function.
    pub fn to_expr(&self) -> Expr {
        let mut terms = vec![Expr::Const(self.constant)];
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c != 0.0 {
                terms.push(Expr::mul(Expr::Const(*c), Expr::Var(i)));
            }
        }
        Expr::sum(terms)
    }
}

/// Sparse affine form with coefficients sorted by variable index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseAffine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl SparseAffine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Default)]
struct Lin {
    c: f64,
    t: BTreeMap<usize, f64>,
}

impl Lin {
    fn konst(c: f64) -> Lin {
        Lin {
            c,
            t: BTreeMap::new(),
        }
    }

    fn as_const(&self) -> Option<f64> {
        if self.t.values().all(|v| *v == 0.0) {
            Some(self.c)
        } else {
            None
        }
    }

    fn scale(mut self, s: f64) -> Lin {
        self.c *= s;
        for v in self.t.values_mut() {
            *v *= s;
        }
        self
    }

    fn plus(mut self, o: Lin, sign: f64) -> Lin {
        self.c += sign * o.c;
        for (k, v) in o.t {
            *self.t.entry(k).or_insert(0.0) += sign * v;
        }
        self
    }
}

fn is_zero(l: &Option<Lin>) -> bool {
    matches!(l.as_ref().and_then(Lin::as_const), Some(c) if c == 0.0)
}

fn lin(e: &Expr, y: &[f64]) -> Option<Lin> {
    match e {
        Expr::Const(c) => Some(Lin::konst(*c)),
        Expr::Var(i) => {
            let mut l = Lin::default();
            l.t.insert(*i, 1.0);
            Some(l)
        }
        Expr::Sample(j) => y.get(*j).map(|v| Lin::konst(*v)),
        Expr::Param(_) => None,
        Expr::Add(a, b) => Some(lin(a, y)?.plus(lin(b, y)?, 1.0)),
        Expr::Sub(a, b) => Some(lin(a, y)?.plus(lin(b, y)?, -1.0)),
        Expr::Mul(a, b) => {
            let la = lin(a, y);
            if is_zero(&la) {
                return Some(Lin::konst(0.0));
            }
            let lb = lin(b, y);
            if is_zero(&lb) {
                return Some(Lin::konst(0.0));
            }
            let (la, lb) = (la?, lb?);
            if let Some(c) = la.as_const() {
                Some(lb.scale(c))
            } else {
                lb.as_const().map(|c| la.scale(c))
            }
        }
        Expr::Div(a, b) => {
            let c = lin(b, y)?.as_const()?;
            if c == 0.0 {
                return None;
            }
            Some(lin(a, y)?.scale(1.0 / c))
        }
        Expr::Neg(a) => Some(lin(a, y)?.scale(-1.0)),
        Expr::Pow(a, k) => {
            let la = lin(a, y)?;
            match (*k, la.as_const()) {
                (0, _) => Some(Lin::konst(1.0)),
                (1, _) => Some(la),
                (_, Some(c)) => {
                    let v = c.powi(*k);
                    v.is_finite().then(|| Lin::konst(v))
                }
                _ => None,
            }
        }
        Expr::Exp(a) | Expr::Ln(a) | Expr::Abs(a) => {
            let c = lin(a, y)?.as_const()?;
            let v = match e {
                Expr::Exp(_) => c.exp(),
                Expr::Ln(_) if c > 0.0 => c.ln(),
                Expr::Ln(_) => return None,
                _ => c.abs(),
            };
            v.is_finite().then(|| Lin::konst(v))
        }
        Expr::Max(v) | Expr::SumSq(v) => {
            let mut vals = Vec::with_capacity(v.len());
            for a in v {
                vals.push(lin(a, y)?.as_const()?);
            }
            Some(Lin::konst(if matches!(e, Expr::Max(_)) {
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().map(|v| v * v).sum()
            }))
        }
    }
}

/// Returns the affine form of `e` in the decision variables when samples are
/// fixed to `y`, or `None` when `e` is not affine. `n` sets the coefficient
/// vector length (extended if the expression references larger indices).
pub fn detect_affine(e: &Expr, y: &[f64], n: usize) -> Option<AffineForm> {
    let l = affine_sparse(e, y)?;
    let len = l.terms.last().map_or(n, |(i, _)| n.max(i + 1));
    let mut coeffs = vec![0.0; len];
    for (i, c) in l.terms {
        coeffs[i] = c;
    }
    Some(AffineForm {
        constant: l.constant,
        coeffs,
    })
}

/// Sparse variant of [`detect_affine`]; zero coefficients are dropped.
pub fn affine_sparse(e: &Expr, y: &[f64]) -> Option<SparseAffine> {
    let l = lin(e, y)?;
    if !l.c.is_finite() || l.t.values().any(|v| !v.is_finite()) {
        return None;
    }
    Some(SparseAffine {
        constant: l.c,
        terms: l.t.into_iter().filter(|(_, v)| *v != 0.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn examples() {
        let e = parse("3*x[0] - 12*x[1] + 2*x[2] - y[0]").unwrap();
        let a = detect_affine(&e, &[1.0], 3).unwrap();
        assert_eq!(a.constant, -1.0);
        assert_eq!(a.coeffs, vec![3.0, -12.0, 2.0]);
        assert!(detect_affine(&parse("x[0]^3").unwrap(), &[], 1).is_none());
        let a = detect_affine(&parse("exp(x[0])*0").unwrap(), &[], 1).unwrap();
        assert_eq!(a.constant, 0.0);
        assert_eq!(a.coeffs, vec![0.0]);
    }

    #[test]
    fn nonlinear_but_affine_after_folding() {
        let e = parse("(x[0] + 2*x[1])/4 - max(y[0], 3)*x[0] + exp(y[1])").unwrap();
        let a = detect_affine(&e, &[5.0, 0.0], 2).unwrap();
        assert_eq!(a.coeffs, vec![0.25 - 5.0, 0.5]);
        assert_eq!(a.constant, 1.0);
        assert!(detect_affine(&parse("x[0]*x[1]").unwrap(), &[], 2).is_none());
        assert!(detect_affine(&parse("abs(x[0])").unwrap(), &[], 1).is_none());
        assert!(detect_affine(&parse("1/x[0]").unwrap(), &[], 1).is_none());
    }

    #[test]
    fn reconstruction_evaluates_identically() {
        let e = parse("2*(x[0] - 3*x[1]) - -x[2]/8 + y[0]^2").unwrap();
        let a = detect_affine(&e, &[1.5], 3).unwrap();
        let r = a.to_expr();
        for k in 0..10 {
            let x = [0.3 * k as f64, -1.1 * k as f64, 2.0 - k as f64];
            let v = e.eval_xy(&x, &[1.5]).unwrap();
            assert!((r.eval_xy(&x, &[]).unwrap() - v).abs() < 1e-9);
            assert!((a.eval(&x) - v).abs() < 1e-9);
        }
    }
}
