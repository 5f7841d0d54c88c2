//! Deterministic-program IR shared by encoders and solvers.

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Interval};
use crate::problem::Sense;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgVar {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    /// Violation of `lhs rel rhs` (0 when satisfied).
    pub fn violation(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Relation::Le => (lhs - rhs).max(0.0),
            Relation::Ge => (rhs - lhs).max(0.0),
            Relation::Eq => (lhs - rhs).abs(),
        }
    }
}

/// `expr rel rhs` over program variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub expr: Expr,
    pub rel: Relation,
    pub rhs: f64,
}

/// `Σ vars rel rhs` over binary variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityRow {
    pub vars: Vec<usize>,
    pub rel: Relation,
    pub rhs: usize,
}

/// `a · b = 0` with both variables nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complementarity {
    pub a: usize,
    pub b: usize,
}

/// Big-M constants of an indicator encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigM {
    /// Upper bound of every score over the box.
    pub big_m: f64,
    /// Lower bound of every score over the box.
    pub small_m: f64,
    /// Strict-violation margin.
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProgramMeta {
    /// Encoding that produced the program (`cpp-mip`, `cpp-kkt`, `sa`, ...).
    pub origin: String,
    /// Number of leading decision variables.
    pub decision_dim: usize,
    pub rank: Option<usize>,
    pub alpha: Option<f64>,
    pub big_m: Option<BigM>,
    pub chi: f64,
}

/// Per-sample indicator or KKT variables of one chance-constraint block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockVars {
    Mip {
        z: Vec<usize>,
        rank: usize,
    },
    Kkt {
        alpha: f64,
        q: usize,
        e_plus: Vec<usize>,
        e_minus: Vec<usize>,
        gamma: Vec<usize>,
        lambda: Vec<usize>,
        beta: Vec<usize>,
    },
}

/// Max-operator linking variables: `mu[i]` and `sigma[i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLink {
    pub mu: Vec<usize>,
    pub sigma: Vec<Vec<usize>>,
}

/// Structure of one encoded chance constraint, kept so solvers can exploit
/// it. `scores[i]` lists the per-sample functions over decision variables
/// (several under the max operator); the sample score is their maximum plus
/// `chi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub scores: Vec<Vec<Expr>>,
    pub chi: f64,
    /// Number of samples that may be left unsatisfied.
    pub drop_budget: usize,
    pub vars: BlockVars,
    pub max_link: Option<MaxLink>,
    pub big_m: BigM,
}

/// Deterministic program `min/max objective` over declared variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetProgram {
    pub vars: Vec<ProgVar>,
    pub objective: Expr,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
    pub cardinality: Vec<CardinalityRow>,
    pub complementarity: Vec<Complementarity>,
    pub meta: ProgramMeta,
    pub blocks: Vec<ScoreBlock>,
}

/// Result of checking a full assignment against a program.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub max_violation: f64,
    /// Human-readable description of the worst violation.
    pub worst: String,
}

impl DetProgram {
    /// Program with the given decision variables and no constraints.
    pub fn new(origin: &str, bounds: &[Interval], objective: Expr, sense: Sense) -> DetProgram {
        DetProgram {
            vars: bounds
                .iter()
                .enumerate()
                .map(|(i, b)| ProgVar {
                    name: format!("x{i}"),
                    kind: VarKind::Continuous,
                    lo: b.lo,
                    hi: b.hi,
                })
                .collect(),
            objective,
            sense,
            constraints: Vec::new(),
            cardinality: Vec::new(),
            complementarity: Vec::new(),
            meta: ProgramMeta {
                origin: origin.into(),
                decision_dim: bounds.len(),
                ..Default::default()
            },
            blocks: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: String, kind: VarKind, lo: f64, hi: f64) -> usize {
        self.vars.push(ProgVar { name, kind, lo, hi });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, expr: Expr, rel: Relation, rhs: f64) {
        self.constraints.push(Constraint { expr, rel, rhs });
    }

    pub fn binaries(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == VarKind::Binary)
            .collect()
    }

    pub fn continuous_count(&self) -> usize {
        self.vars
            .iter()
            .filter(|v| v.kind == VarKind::Continuous)
            .count()
    }

    /// Objective value in minimization form.
    pub fn min_objective_value(&self, x: &[f64]) -> Option<f64> {
        let v = self.objective.eval_xy(x, &[]).ok()?;
        Some(match self.sense {
            Sense::Min => v,
            Sense::Max => -v,
        })
    }

    /// Checks the structural invariants of the IR.
    pub fn check(&self) -> Result<(), String> {
        let n = self.vars.len();
        for v in &self.vars {
            if !(v.lo <= v.hi) || !v.lo.is_finite() || !v.hi.is_finite() {
                return Err(format!("variable {} has invalid bounds", v.name));
            }
        }
        let exprs = std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.expr));
        for e in exprs {
            if e.var_dim() > n {
                return Err(format!("expression `{e}` references an undeclared variable"));
            }
            if e.sample_dim() > 0 {
                return Err(format!("expression `{e}` references samples"));
            }
        }
        for row in &self.cardinality {
            if row.vars.iter().any(|&v| v >= n || self.vars[v].kind != VarKind::Binary) {
                return Err("cardinality row over a non-binary variable".into());
            }
            if row.rel != Relation::Le && row.rhs > row.vars.len() {
                return Err(format!(
                    "cardinality threshold {} exceeds {} binaries",
                    row.rhs,
                    row.vars.len()
                ));
            }
        }
        for c in &self.complementarity {
            if c.a >= n || c.b >= n || self.vars[c.a].lo < 0.0 || self.vars[c.b].lo < 0.0 {
                return Err("complementarity pair over an invalid variable".into());
            }
        }
        if let Some(bm) = self.meta.big_m {
            if !(bm.big_m > 0.0 && bm.small_m < 0.0 && bm.zeta > 0.0) {
                return Err("big-M constants must satisfy M > 0 > m and zeta > 0".into());
            }
        }
        Ok(())
    }

    /// Re-evaluates every constraint at the full assignment `x`.
    pub fn verify(&self, x: &[f64]) -> Verification {
        let mut worst = (0.0f64, String::new());
        let mut note = |v: f64, what: &dyn Fn() -> String| {
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if v > worst.0 {
                worst = (v, what());
            }
        };
        if x.len() != self.vars.len() {
            return Verification {
                max_violation: f64::INFINITY,
                worst: "assignment length mismatch".into(),
            };
        }
        for (i, v) in self.vars.iter().enumerate() {
            note((v.lo - x[i]).max(x[i] - v.hi), &|| format!("bounds of {}", v.name));
            if v.kind == VarKind::Binary {
                note((x[i] - x[i].round()).abs(), &|| format!("integrality of {}", v.name));
            }
        }
        for (k, c) in self.constraints.iter().enumerate() {
            let lhs = c.expr.eval_xy(x, &[]).unwrap_or(f64::NAN);
            note(c.rel.violation(lhs, c.rhs), &|| format!("constraint {k}: {}", c.expr));
        }
        for (k, row) in self.cardinality.iter().enumerate() {
            let s: f64 = row.vars.iter().map(|&v| x[v].round()).sum();
            note(row.rel.violation(s, row.rhs as f64), &|| format!("cardinality row {k}"));
        }
        for c in &self.complementarity {
            note((x[c.a] * x[c.b]).abs(), &|| {
                format!("complementarity {}·{}", self.vars[c.a].name, self.vars[c.b].name)
            });
        }
        if self.min_objective_value(x).map_or(true, |v| !v.is_finite()) {
            note(f64::INFINITY, &|| "objective is not finite".into());
        }
        Verification {
            max_violation: worst.0,
            worst: worst.1,
        }
    }
}
