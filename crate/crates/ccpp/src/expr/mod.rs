//! Expression trees over decision variables `x[i]`, uncertainty components
//! `y[j]` and named parameters.
//!
//! Expressions are parsed from a small text grammar, constant-folded at
//! construction, and evaluated either by walking the tree ([`Expr::eval`]) or
//! through a compiled stack [`Tape`] on hot paths.

mod affine;
mod interval;
mod parse;
mod tape;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use affine::{affine_sparse, detect_affine, AffineForm, SparseAffine};
pub use interval::Interval;
pub use parse::{parse, parse_with, ParseOptions};
pub use tape::Tape;

/// Named parameter values used during evaluation.
pub type Params = HashMap<String, f64>;

/// Errors raised while parsing or evaluating expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("{kind}[{index}] out of declared bounds (dimension {limit})")]
    IndexOutOfBounds {
        kind: char,
        index: usize,
        limit: usize,
    },
    #[error("domain error in `{node}`: {msg}")]
    Domain { node: String, msg: String },
    #[error("missing value for {what}")]
    Missing { what: String },
    #[error("unbounded interval image of `{node}`")]
    Unbounded { node: String },
}

/// Expression node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Decision variable `x[i]`.
    Var(usize),
    /// Uncertainty component `y[j]`.
    Sample(usize),
    Param(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// Integer power.
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Abs(Box<Expr>),
    Max(Vec<Expr>),
    SumSq(Vec<Expr>),
}

fn domain(e: &Expr, msg: &str) -> ExprError {
    ExprError::Domain {
        node: e.to_string(),
        msg: msg.to_string(),
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    /// `a + b`, folded when both sides are constants.
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(u), Expr::Const(v)) => Expr::Const(u + v),
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(u), Expr::Const(v)) => Expr::Const(u - v),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(u), Expr::Const(v)) => Expr::Const(u * v),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(u) => Expr::Const(-u),
            other => Expr::Neg(Box::new(other)),
        }
    }

    /// Sum of a list of terms (zero for an empty list).
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Const(0.0),
            Some(first) => it.fold(first, Expr::add),
        }
    }

    /// Folds every constant subtree, rejecting constant division by zero and
    /// non-finite constants.
    pub fn fold(self) -> Result<Expr, ExprError> {
        let folded = match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Sample(_) | Expr::Param(_) => self,
            Expr::Add(a, b) => Expr::Add(Box::new(a.fold()?), Box::new(b.fold()?)),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.fold()?), Box::new(b.fold()?)),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.fold()?), Box::new(b.fold()?)),
            Expr::Div(a, b) => {
                let b = b.fold()?;
                if let Expr::Const(v) = b {
                    if v == 0.0 {
                        return Err(ExprError::Domain {
                            node: format!("{} / {}", a, b),
                            msg: "division by constant zero".into(),
                        });
                    }
                }
                Expr::Div(Box::new(a.fold()?), Box::new(b))
            }
            Expr::Neg(a) => Expr::Neg(Box::new(a.fold()?)),
            Expr::Pow(a, k) => Expr::Pow(Box::new(a.fold()?), k),
            Expr::Exp(a) => Expr::Exp(Box::new(a.fold()?)),
            Expr::Ln(a) => Expr::Ln(Box::new(a.fold()?)),
            Expr::Abs(a) => Expr::Abs(Box::new(a.fold()?)),
            Expr::Max(v) => Expr::Max(v.into_iter().map(Expr::fold).collect::<Result<_, _>>()?),
            Expr::SumSq(v) => {
                Expr::SumSq(v.into_iter().map(Expr::fold).collect::<Result<_, _>>()?)
            }
        };
        folded.fold_root()
    }

    /// Folds this node assuming its children are already folded.
    fn fold_root(self) -> Result<Expr, ExprError> {
        let all_const = match &self {
            Expr::Const(_) | Expr::Var(_) | Expr::Sample(_) | Expr::Param(_) => return Ok(self),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.is_const() && b.is_const()
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Ln(a) | Expr::Abs(a) => {
                a.is_const()
            }
            Expr::Max(v) | Expr::SumSq(v) => v.iter().all(Expr::is_const),
        };
        if !all_const {
            return Ok(self);
        }
        let v = self.eval(&[], &[], &Params::new())?;
        Ok(Expr::Const(v))
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Sample(_) | Expr::Param(_) => vec![],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                vec![a, b]
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Ln(a) | Expr::Abs(a) => vec![a],
            Expr::Max(v) | Expr::SumSq(v) => v.iter().collect(),
        }
    }

    /// Decision-variable indices referenced by the expression.
    pub fn vars(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                out.insert(*i);
            }
        });
        out
    }

    /// Largest referenced decision index plus one (0 when none).
    pub fn var_dim(&self) -> usize {
        self.vars().iter().next_back().map_or(0, |i| i + 1)
    }

    /// Largest referenced sample index plus one (0 when none).
    pub fn sample_dim(&self) -> usize {
        let mut d = 0;
        self.visit(&mut |e| {
            if let Expr::Sample(j) = e {
                d = d.max(j + 1);
            }
        });
        d
    }

    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                out.insert(p.clone());
            }
        });
        out
    }

    fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Rebuilds the tree bottom-up, replacing leaves through `leaf`.
    pub fn map_leaves(&self, leaf: &dyn Fn(&Expr) -> Expr) -> Expr {
        let b = |e: &Expr| Box::new(e.map_leaves(leaf));
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Sample(_) | Expr::Param(_) => leaf(self),
            Expr::Add(a, c) => Expr::Add(b(a), b(c)),
            Expr::Sub(a, c) => Expr::Sub(b(a), b(c)),
            Expr::Mul(a, c) => Expr::Mul(b(a), b(c)),
            Expr::Div(a, c) => Expr::Div(b(a), b(c)),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Pow(a, k) => Expr::Pow(b(a), *k),
            Expr::Exp(a) => Expr::Exp(b(a)),
            Expr::Ln(a) => Expr::Ln(b(a)),
            Expr::Abs(a) => Expr::Abs(b(a)),
            Expr::Max(v) => Expr::Max(v.iter().map(|e| e.map_leaves(leaf)).collect()),
            Expr::SumSq(v) => Expr::SumSq(v.iter().map(|e| e.map_leaves(leaf)).collect()),
        }
    }

    /// Replaces `y[j]` by the numeric sample and folds.
    pub fn substitute_samples(&self, y: &[f64]) -> Result<Expr, ExprError> {
        let mut missing = None;
        let out = self.map_leaves(&|e| match e {
            Expr::Sample(j) if *j < y.len() => Expr::Const(y[*j]),
            other => other.clone(),
        });
        out.visit(&mut |e| {
            if let Expr::Sample(j) = e {
                missing.get_or_insert(*j);
            }
        });
        if let Some(j) = missing {
            return Err(ExprError::Missing {
                what: format!("y[{j}]"),
            });
        }
        out.fold()
    }

    /// Replaces named parameters by their values and folds.
    pub fn resolve_params(&self, params: &Params) -> Result<Expr, ExprError> {
        for name in self.param_names() {
            if !params.contains_key(&name) {
                return Err(ExprError::Missing { what: name });
            }
        }
        self.map_leaves(&|e| match e {
            Expr::Param(p) => Expr::Const(params[p]),
            other => other.clone(),
        })
        .fold()
    }

    /// Renumbers decision variables through `f`.
    pub fn remap_vars(&self, f: &dyn Fn(usize) -> usize) -> Expr {
        self.map_leaves(&|e| match e {
            Expr::Var(i) => Expr::Var(f(*i)),
            other => other.clone(),
        })
    }

    /// Evaluates the expression. Domain violations and non-finite results are
    /// reported with the offending node.
    pub fn eval(&self, x: &[f64], y: &[f64], params: &Params) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *x.get(*i).ok_or_else(|| ExprError::Missing {
                what: format!("x[{i}]"),
            })?,
            Expr::Sample(j) => *y.get(*j).ok_or_else(|| ExprError::Missing {
                what: format!("y[{j}]"),
            })?,
            Expr::Param(p) => *params.get(p).ok_or_else(|| ExprError::Missing {
                what: p.clone(),
            })?,
            Expr::Add(a, b) => a.eval(x, y, params)? + b.eval(x, y, params)?,
            Expr::Sub(a, b) => a.eval(x, y, params)? - b.eval(x, y, params)?,
            Expr::Mul(a, b) => a.eval(x, y, params)? * b.eval(x, y, params)?,
            Expr::Div(a, b) => {
                let den = b.eval(x, y, params)?;
                if den == 0.0 {
                    return Err(domain(self, "division by zero"));
                }
                a.eval(x, y, params)? / den
            }
            Expr::Neg(a) => -a.eval(x, y, params)?,
            Expr::Pow(a, k) => {
                let base = a.eval(x, y, params)?;
                if base == 0.0 && *k < 0 {
                    return Err(domain(self, "zero to a negative power"));
                }
                base.powi(*k)
            }
            Expr::Exp(a) => a.eval(x, y, params)?.exp(),
            Expr::Ln(a) => {
                let v = a.eval(x, y, params)?;
                if v <= 0.0 {
                    return Err(domain(self, "logarithm of a non-positive value"));
                }
                v.ln()
            }
            Expr::Abs(a) => a.eval(x, y, params)?.abs(),
            Expr::Max(v) => {
                let mut m = f64::NEG_INFINITY;
                for e in v {
                    m = m.max(e.eval(x, y, params)?);
                }
                m
            }
            Expr::SumSq(v) => {
                let mut s = 0.0;
                for e in v {
                    let t = e.eval(x, y, params)?;
                    s += t * t;
                }
                s
            }
        };
        if !v.is_finite() {
            return Err(domain(self, "non-finite value"));
        }
        Ok(v)
    }

    /// Evaluation without named parameters.
    pub fn eval_xy(&self, x: &[f64], y: &[f64]) -> Result<f64, ExprError> {
        self.eval(x, y, &Params::new())
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Pow(..) => 3,
            Expr::Neg(..) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.fmt_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "x[{i}]"),
            Expr::Sample(j) => write!(f, "y[{j}]"),
            Expr::Param(p) => write!(f, "{p}"),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, "{}", if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                b.fmt_prec(f, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "{}", if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                b.fmt_prec(f, 3)
            }
            Expr::Pow(a, k) => {
                a.fmt_prec(f, 4)?;
                write!(f, "^{k}")
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 5)
            }
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Ln(a) => write!(f, "ln({a})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Max(v) | Expr::SumSq(v) => {
                write!(f, "{}(", if matches!(self, Expr::Max(_)) { "max" } else { "sumsq" })?;
                for (k, e) in v.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Expr, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Central finite-difference gradient with respect to the decision variables.
///
/// A non-positive `step` selects the default `max(1e-6, 1e-7·|xᵢ|)`.
pub fn grad_fd(e: &Expr, x: &[f64], y: &[f64], step: f64) -> Result<Vec<f64>, ExprError> {
    let params = Params::new();
    let mut g = vec![0.0; x.len()];
    let vars = e.vars();
    let mut xp = x.to_vec();
    for i in vars {
        if i >= x.len() {
            return Err(ExprError::Missing {
                what: format!("x[{i}]"),
            });
        }
        let h = if step > 0.0 {
            step
        } else {
            default_step(x[i])
        };
        xp[i] = x[i] + h;
        let fp = e.eval(&xp, y, &params)?;
        xp[i] = x[i] - h;
        let fm = e.eval(&xp, y, &params)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Default finite-difference step for a coordinate value.
pub fn default_step(xi: f64) -> f64 {
    (1e-7 * xi.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn eval_examples() {
        let e = p("50*y[0]*exp(x[0]) - 5");
        assert_eq!(e.eval_xy(&[0.0], &[0.1]).unwrap(), 0.0);
        let v = p("x[0]^3*exp(x[0])").eval_xy(&[-3.0], &[]).unwrap();
        assert!((v - (-27.0 * (-3.0f64).exp())).abs() < 1e-12);
        assert!((v + 1.34425).abs() < 1e-5);
        assert!(matches!(
            p("ln(x[0])").eval_xy(&[-1.0], &[]),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn division_by_runtime_zero_is_domain_error() {
        let err = p("1/x[0]").eval_xy(&[0.0], &[]).unwrap_err();
        match err {
            ExprError::Domain { node, .. } => assert_eq!(node, "1.0/x[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradients() {
        let g = grad_fd(&p("x[0]^2"), &[3.0], &[], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = grad_fd(&p("5"), &[1.0, 2.0], &[], 0.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = grad_fd(&p("x[0]*x[1]"), &[2.0, 7.0], &[], 0.0).unwrap();
        assert!((g[0] - 7.0).abs() < 1e-6 && (g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn params_resolve() {
        let e = p("a*x[0] + b");
        let mut params = Params::new();
        params.insert("a".into(), 2.0);
        params.insert("b".into(), 1.0);
        assert_eq!(e.eval(&[3.0], &[], &params).unwrap(), 7.0);
        let r = e.resolve_params(&params).unwrap();
        assert_eq!(r, p("2*x[0] + 1"));
        assert!(e.resolve_params(&Params::new()).is_err());
    }

    #[test]
    fn substitution_folds() {
        let e = p("3*x[0] - y[0]*2");
        let s = e.substitute_samples(&[4.0]).unwrap();
        assert_eq!(s, p("3*x[0] - 8"));
        assert!(e.substitute_samples(&[]).is_err());
    }

    #[test]
    fn serde_uses_text_form() {
        let e = p("max(x[0], 2*y[1])");
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, "\"max(x[0], 2.0*y[1])\"");
        let back: Expr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
