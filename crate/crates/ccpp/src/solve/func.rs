//! Compiled functions and normalized constraint rows used by the
//! continuous solvers.

use std::rc::Rc;

use crate::expr::{affine_sparse, default_step, Expr, ExprError, SparseAffine, Tape};

/// A compiled function of the solver variables.
#[derive(Debug)]
pub(crate) struct Func {
    tape: Tape,
    support: Vec<usize>,
    pub affine: Option<SparseAffine>,
}

impl Func {
    pub fn new(e: &Expr) -> Result<Rc<Func>, ExprError> {
        let tape = Tape::compile(e)?;
        let support = tape.vars().to_vec();
        Ok(Rc::new(Func {
            tape,
            support,
            affine: affine_sparse(e, &[]),
        }))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.affine {
            Some(a) => a.eval(x),
            None => self.tape.eval(x, &[]),
        }
    }

    /// Adds `w·∇f(x)` to `g`; `x` is restored on return.
    pub fn add_grad(&self, x: &mut [f64], w: f64, g: &mut [f64]) {
        if w == 0.0 {
            return;
        }
        if let Some(a) = &self.affine {
            for &(i, c) in &a.terms {
                g[i] += w * c;
            }
            return;
        }
        for &i in &self.support {
            let xi = x[i];
            let h = default_step(xi);
            x[i] = xi + h;
            let fp = self.tape.eval(x, &[]);
            x[i] = xi - h;
            let fm = self.tape.eval(x, &[]);
            x[i] = xi;
            let d = (fp - fm) / (2.0 * h);
            if d.is_finite() {
                g[i] += w * d;
            }
        }
    }

    /// Adds `w·∇²f(x)` to the dense matrix `h` by second differences;
    /// affine functions contribute nothing. `x` is restored on return.
    pub fn add_hess(&self, x: &mut [f64], w: f64, h: &mut [Vec<f64>]) {
        if w == 0.0 || self.affine.is_some() {
            return;
        }
        let f0 = self.tape.eval(x, &[]);
        let step = |v: f64| 1e-4 * v.abs().max(1.0);
        for (a, &i) in self.support.iter().enumerate() {
            let (xi, hi) = (x[i], step(x[i]));
            x[i] = xi + hi;
            let fp = self.tape.eval(x, &[]);
            x[i] = xi - hi;
            let fm = self.tape.eval(x, &[]);
            x[i] = xi;
            let d = (fp - 2.0 * f0 + fm) / (hi * hi);
            if d.is_finite() {
                h[i][i] += w * d;
            }
            for &j in &self.support[a + 1..] {
                let (xj, hj) = (x[j], step(x[j]));
                let mut corner = |si: f64, sj: f64| {
                    x[i] = xi + si * hi;
                    x[j] = xj + sj * hj;
                    self.tape.eval(x, &[])
                };
                let d = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * hi * hj);
                x[i] = xi;
                x[j] = xj;
                if d.is_finite() {
                    h[i][j] += w * d;
                    h[j][i] += w * d;
                }
            }
        }
    }
}

/// `scale·f(x) + offset ≤ 0` (or `= 0` when `eq`).
#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub f: Rc<Func>,
    pub scale: f64,
    pub offset: f64,
    pub eq: bool,
}

impl Row {
    pub fn le(f: Rc<Func>, offset: f64) -> Row {
        Row {
            f,
            scale: 1.0,
            offset,
            eq: false,
        }
    }

    pub fn ge(f: Rc<Func>, rhs: f64) -> Row {
        Row {
            f,
            scale: -1.0,
            offset: rhs,
            eq: false,
        }
    }

    pub fn eq(f: Rc<Func>, offset: f64) -> Row {
        Row {
            f,
            scale: 1.0,
            offset,
            eq: true,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.scale * self.f.eval(x) + self.offset
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x);
        if v.is_nan() {
            f64::INFINITY
        } else if self.eq {
            v.abs()
        } else {
            v.max(0.0)
        }
    }
}

/// `min scale·f(x)` subject to rows and a box.
#[derive(Debug, Clone)]
pub(crate) struct Nlp {
    pub obj: Rc<Func>,
    pub obj_scale: f64,
    pub rows: Vec<Row>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Nlp {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.obj_scale * self.obj.eval(x)
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.violation(x))
            .fold(0.0, f64::max)
    }

    pub fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn is_affine(&self) -> bool {
        self.obj.affine.is_some() && self.rows.iter().all(|r| r.f.affine.is_some())
    }
}
