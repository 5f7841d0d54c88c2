//! Postfix evaluation tape compiled from an [`Expr`].

use super::{Expr, ExprError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Sample(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Pow(i32),
    Exp,
    Ln,
    Abs,
    Max(usize),
    SumSq(usize),
}

/// Flat postfix program; evaluation returns NaN on domain violations instead
/// of an error, so callers check `is_finite` on the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    ops: Vec<Op>,
    vars: Vec<usize>,
    depth: usize,
}

const INLINE_STACK: usize = 48;

impl Tape {
    /// Compiles an expression; named parameters must already be resolved.
    pub fn compile(e: &Expr) -> Result<Tape, ExprError> {
        let mut ops = Vec::new();
        emit(e, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Var(_) | Op::Sample(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                Op::Max(k) | Op::SumSq(k) => depth -= k - 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(Tape {
            ops,
            vars: e.vars().into_iter().collect(),
            depth: max_depth,
        })
    }

    /// Sorted decision-variable indices read by the tape.
    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.depth <= INLINE_STACK {
            let mut buf = [0.0f64; INLINE_STACK];
            run(&self.ops, x, y, &mut buf)
        } else {
            let mut buf = vec![0.0f64; self.depth];
            run(&self.ops, x, y, &mut buf)
        }
    }
}

fn run(ops: &[Op], x: &[f64], y: &[f64], st: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(c) => {
                st[sp] = c;
                sp += 1;
            }
            Op::Var(i) => {
                st[sp] = x[i];
                sp += 1;
            }
            Op::Sample(j) => {
                st[sp] = y[j];
                sp += 1;
            }
            Op::Add => {
                sp -= 1;
                st[sp - 1] += st[sp];
            }
            Op::Sub => {
                sp -= 1;
                st[sp - 1] -= st[sp];
            }
            Op::Mul => {
                sp -= 1;
                st[sp - 1] *= st[sp];
            }
            Op::Div => {
                sp -= 1;
                st[sp - 1] = if st[sp] == 0.0 {
                    f64::NAN
                } else {
                    st[sp - 1] / st[sp]
                };
            }
            Op::Neg => st[sp - 1] = -st[sp - 1],
            Op::Pow(k) => st[sp - 1] = st[sp - 1].powi(k),
            Op::Exp => st[sp - 1] = st[sp - 1].exp(),
            Op::Ln => {
                let a = st[sp - 1];
                st[sp - 1] = if a > 0.0 { a.ln() } else { f64::NAN };
            }
            Op::Abs => st[sp - 1] = st[sp - 1].abs(),
            Op::Max(k) => {
                let mut m = f64::NEG_INFINITY;
                for v in &st[sp - k..sp] {
                    m = m.max(*v);
                    if v.is_nan() {
                        m = f64::NAN;
                        break;
                    }
                }
                sp -= k - 1;
                st[sp - 1] = m;
            }
            Op::SumSq(k) => {
                let s: f64 = st[sp - k..sp].iter().map(|v| v * v).sum();
                sp -= k - 1;
                st[sp - 1] = s;
            }
        }
    }
    st[0]
}

fn emit(e: &Expr, ops: &mut Vec<Op>) -> Result<(), ExprError> {
    match e {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Sample(j) => ops.push(Op::Sample(*j)),
        Expr::Param(p) => {
            return Err(ExprError::Missing {
                what: format!("unresolved parameter {p}"),
            })
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops)?;
            emit(b, ops)?;
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) | Expr::Ln(a) | Expr::Abs(a) => {
            emit(a, ops)?;
            ops.push(match e {
                Expr::Neg(_) => Op::Neg,
                Expr::Pow(_, k) => Op::Pow(*k),
                Expr::Exp(_) => Op::Exp,
                Expr::Ln(_) => Op::Ln,
                _ => Op::Abs,
            });
        }
        Expr::Max(v) | Expr::SumSq(v) => {
            for a in v {
                emit(a, ops)?;
            }
            ops.push(if matches!(e, Expr::Max(_)) {
                Op::Max(v.len())
            } else {
                Op::SumSq(v.len())
            });
        }
    }
    Ok(())
}
