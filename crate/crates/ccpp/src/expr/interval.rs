//! Outward interval arithmetic over expression trees.

use serde::{Deserialize, Serialize};

use super::{Expr, ExprError, Params};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn sub(self, o: Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    fn mul(self, o: Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }

    fn recip(self) -> Option<Interval> {
        if self.lo <= 0.0 && self.hi >= 0.0 {
            None
        } else {
            Some(Interval::new(1.0 / self.hi, 1.0 / self.lo))
        }
    }

    fn sqr(self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        if self.lo <= 0.0 && self.hi >= 0.0 {
            Interval::new(0.0, a.max(b))
        } else {
            Interval::new(a.min(b), a.max(b))
        }
    }

    fn powi(self, k: i32) -> Option<Interval> {
        if k == 0 {
            return Some(Interval::point(1.0));
        }
        if k < 0 {
            return self.powi(-k)?.recip();
        }
        let a = self.lo.powi(k);
        let b = self.hi.powi(k);
        if k % 2 == 1 {
            Some(Interval::new(a, b))
        } else if self.lo <= 0.0 && self.hi >= 0.0 {
            Some(Interval::new(0.0, a.max(b)))
        } else {
            Some(Interval::new(a.min(b), a.max(b)))
        }
    }

    fn abs(self) -> Interval {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            Interval::new(-self.hi, -self.lo)
        } else {
            Interval::new(0.0, (-self.lo).max(self.hi))
        }
    }
}

impl Expr {
    /// Interval image of the expression when each decision variable ranges
    /// over its box entry and samples are fixed numbers.
    pub fn interval(
        &self,
        xbox: &[Interval],
        y: &[f64],
        params: &Params,
    ) -> Result<Interval, ExprError> {
        let unbounded = || ExprError::Unbounded {
            node: self.to_string(),
        };
        let r = match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(i) => *xbox.get(*i).ok_or_else(|| ExprError::Missing {
                what: format!("x[{i}]"),
            })?,
            Expr::Sample(j) => Interval::point(*y.get(*j).ok_or_else(|| ExprError::Missing {
                what: format!("y[{j}]"),
            })?),
            Expr::Param(p) => Interval::point(*params.get(p).ok_or_else(|| {
                ExprError::Missing { what: p.clone() }
            })?),
            Expr::Add(a, b) => a.interval(xbox, y, params)?.add(b.interval(xbox, y, params)?),
            Expr::Sub(a, b) => a.interval(xbox, y, params)?.sub(b.interval(xbox, y, params)?),
            Expr::Mul(a, b) => {
                let ia = a.interval(xbox, y, params)?;
                let ib = b.interval(xbox, y, params)?;
                if a == b {
                    ia.sqr()
                } else {
                    ia.mul(ib)
                }
            }
            Expr::Div(a, b) => {
                let ia = a.interval(xbox, y, params)?;
                let ib = b.interval(xbox, y, params)?.recip().ok_or_else(unbounded)?;
                ia.mul(ib)
            }
            Expr::Neg(a) => {
                let i = a.interval(xbox, y, params)?;
                Interval::new(-i.hi, -i.lo)
            }
            Expr::Pow(a, k) => a
                .interval(xbox, y, params)?
                .powi(*k)
                .ok_or_else(unbounded)?,
            Expr::Exp(a) => {
                let i = a.interval(xbox, y, params)?;
                Interval::new(i.lo.exp(), i.hi.exp())
            }
            Expr::Ln(a) => {
                let i = a.interval(xbox, y, params)?;
                if i.lo <= 0.0 {
                    return Err(unbounded());
                }
                Interval::new(i.lo.ln(), i.hi.ln())
            }
            Expr::Abs(a) => a.interval(xbox, y, params)?.abs(),
            Expr::Max(v) => {
                let mut out = Interval::point(f64::NEG_INFINITY);
                for e in v {
                    let i = e.interval(xbox, y, params)?;
                    out = Interval::new(out.lo.max(i.lo), out.hi.max(i.hi));
                }
                out
            }
            Expr::SumSq(v) => {
                let mut out = Interval::point(0.0);
                for e in v {
                    out = out.add(e.interval(xbox, y, params)?.sqr());
                }
                out
            }
        };
        if !(r.lo.is_finite() && r.hi.is_finite()) {
            return Err(unbounded());
        }
        Ok(r)
    }
}
