//! Chance-constrained problem model, uncertainty distributions, seeded
//! sampling and problem-file loading.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, Normal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_with, Expr, ExprError, Interval, Params, ParseOptions, Tape};
use crate::quantile::ConformalLevel;
use crate::robust::{min_robust_size, Divergence, DivergenceKind};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("expression `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    #[default]
    Min,
    Max,
}

/// Uncertainty distribution over the sample vector `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    /// Exponential with the given mean (CDF `1 − e^{−t/mean}`).
    Exponential { mean: f64 },
    Laplace { location: f64, scale: f64 },
    /// Normal parameterized by mean and variance.
    Normal { mean: f64, variance: f64 },
    /// `location + scale·T_dof`.
    StudentT { location: f64, scale: f64, dof: f64 },
    /// Independent components concatenated in order.
    Product { components: Vec<Distribution> },
    /// `count` independent copies of one component.
    Iid {
        count: usize,
        component: Box<Distribution>,
    },
}

impl Distribution {
    /// Number of sample coordinates produced per draw.
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Product { components } => components.iter().map(|c| c.dim()).sum(),
            Distribution::Iid { count, component } => count * component.dim(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let bad = |m: &str| Err(ProblemError::Invalid(format!("distribution: {m}")));
        let finite = |v: f64| v.is_finite();
        match self {
            Distribution::Exponential { mean } if !(*mean > 0.0 && finite(*mean)) => {
                bad("exponential mean must be positive")
            }
            Distribution::Laplace { location, scale }
                if !(finite(*location) && *scale > 0.0 && finite(*scale)) =>
            {
                bad("laplace scale must be positive")
            }
            Distribution::Normal { mean, variance }
                if !(finite(*mean) && *variance > 0.0 && finite(*variance)) =>
            {
                bad("normal variance must be positive")
            }
            Distribution::StudentT {
                location,
                scale,
                dof,
            } if !(finite(*location) && *scale > 0.0 && finite(*scale) && *dof > 0.0) => {
                bad("student_t scale and dof must be positive")
            }
            Distribution::Product { components } => {
                if components.is_empty() {
                    return bad("empty product");
                }
                components.iter().try_for_each(Distribution::validate)
            }
            Distribution::Iid { count, component } => {
                if *count == 0 {
                    return bad("iid count must be positive");
                }
                component.validate()
            }
            _ => Ok(()),
        }
    }

    /// Appends one draw to `out`.
    pub fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            Distribution::Exponential { mean } => {
                out.push(Exp::new(1.0 / mean).expect("validated").sample(rng))
            }
            Distribution::Laplace { location, scale } => {
                // Inverse CDF on u ∈ (−½, ½).
                let mut g: f64 = rng.gen();
                while g == 0.0 {
                    g = rng.gen();
                }
                let u = g - 0.5;
                out.push(location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln());
            }
            Distribution::Normal { mean, variance } => out.push(
                Normal::new(*mean, variance.sqrt())
                    .expect("validated")
                    .sample(rng),
            ),
            Distribution::StudentT {
                location,
                scale,
                dof,
            } => {
                let t: f64 = StudentT::new(*dof).expect("validated").sample(rng);
                out.push(location + scale * t)
            }
            Distribution::Product { components } => {
                for c in components {
                    c.draw_into(rng, out);
                }
            }
            Distribution::Iid { count, component } => {
                for _ in 0..*count {
                    component.draw_into(rng, out);
                }
            }
        }
    }

    /// `count` i.i.d. rows from `rng`.
    pub fn sample_rows<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let mut row = Vec::with_capacity(self.dim());
                self.draw_into(rng, &mut row);
                row
            })
            .collect()
    }
}

/// ChaCha8 generator seeded from `seed` on the given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` i.i.d. rows drawn deterministically from `seed`.
pub fn sample(dist: &Distribution, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, ProblemError> {
    dist.validate()?;
    if count == 0 {
        return Err(ProblemError::Invalid("sample count must be at least 1".into()));
    }
    Ok(dist.sample_rows(&mut stream_rng(seed, 0), count))
}

/// Deterministic rows, indexed as `train = [0, K)`, `calib = [K, K+L)`,
/// `test = [K+L, K+L+V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub k: usize,
    pub l: usize,
    pub v: usize,
    pub rows: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SampleSet {
    pub fn train(&self) -> &[Vec<f64>] {
        &self.rows[..self.k]
    }

    pub fn calib(&self) -> &[Vec<f64>] {
        &self.rows[self.k..self.k + self.l]
    }

    pub fn test(&self) -> &[Vec<f64>] {
        &self.rows[self.k + self.l..]
    }
}

/// Chance-constrained optimization problem
/// `min/max J(x) s.t. P(fⱼ(x,Y) ≤ 0 ∀j) ≥ 1 − δ, h(x) ≤ 0, g(x) = 0, x ∈ box`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcoProblem {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub sense: Sense,
    pub objective: Expr,
    pub chance: Vec<Expr>,
    pub delta: f64,
    pub ineq: Vec<Expr>,
    pub eq: Vec<Expr>,
    pub bounds: Vec<Interval>,
    pub epsilon: Option<f64>,
    pub divergence_kind: DivergenceKind,
    pub chi: f64,
}

impl CcoProblem {
    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let inv = |m: String| Err(ProblemError::Invalid(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return inv(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.chance.is_empty() {
            return inv("at least one chance constraint is required".into());
        }
        if self.bounds.len() != self.n {
            return inv(format!("{} bounds for n = {}", self.bounds.len(), self.n));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return inv(format!("bound {i} must be finite with lo <= hi"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return inv(format!("epsilon {e} must be >= 0"));
            }
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            return inv(format!("chi {} must be >= 0", self.chi));
        }
        for e in self.all_exprs() {
            if e.var_dim() > self.n || e.sample_dim() > self.d {
                return inv(format!("expression `{e}` exceeds declared dimensions"));
            }
            if !e.param_names().is_empty() {
                return inv(format!("expression `{e}` has unresolved parameters"));
            }
        }
        Ok(())
    }

    fn all_exprs(&self) -> impl Iterator<Item = &Expr> {
        std::iter::once(&self.objective)
            .chain(&self.chance)
            .chain(&self.ineq)
            .chain(&self.eq)
    }

    /// Number of chance constraints `s`.
    pub fn s(&self) -> usize {
        self.chance.len()
    }

    pub fn divergence(&self) -> Divergence {
        Divergence::new(self.divergence_kind, self.epsilon.unwrap_or(0.0))
    }

    /// Objective in minimization form (negated for max-sense problems).
    pub fn min_objective(&self) -> Expr {
        match self.sense {
            Sense::Min => self.objective.clone(),
            Sense::Max => Expr::neg(self.objective.clone()),
        }
    }

    pub fn chance_tapes(&self) -> Vec<Tape> {
        self.chance
            .iter()
            .map(|e| Tape::compile(e).expect("validated expression"))
            .collect()
    }

    /// Scores `fⱼ(x, yᵢ)` indexed `[j][i]`.
    pub fn chance_scores(&self, x: &[f64], rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ExprError> {
        let params = Params::new();
        self.chance
            .iter()
            .map(|f| rows.iter().map(|y| f.eval(x, y, &params)).collect())
            .collect()
    }

    /// Per-row `maxⱼ fⱼ(x, yᵢ)`.
    pub fn max_scores(&self, x: &[f64], rows: &[Vec<f64>]) -> Result<Vec<f64>, ExprError> {
        let per = self.chance_scores(x, rows)?;
        Ok((0..rows.len())
            .map(|i| per.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Largest violation of the deterministic constraints at `x`.
    pub fn deterministic_violation(&self, x: &[f64]) -> Result<f64, ExprError> {
        let p = Params::new();
        let mut v: f64 = 0.0;
        for h in &self.ineq {
            v = v.max(h.eval(x, &[], &p)?);
        }
        for g in &self.eq {
            v = v.max(g.eval(x, &[], &p)?.abs());
        }
        for (xi, b) in x.iter().zip(&self.bounds) {
            v = v.max(b.lo - xi).max(xi - b.hi);
        }
        Ok(v)
    }
}

/// Per-set size requirement that failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SizeViolation {
    /// `"K"` or `"L"`.
    pub set: String,
    pub given: usize,
    /// Smallest admissible size, `None` if no size works.
    pub minimal: Option<usize>,
}

/// Smallest `n` with `n ≥ ⌈(n+1)(1−δ)⌉`.
pub fn minimal_size(delta: f64) -> usize {
    (1..).find(|&n| ConformalLevel::new(delta, n).is_ok()).unwrap()
}

/// Checks the training and calibration sizes against the rank requirement
/// (or the robust bound when `robust` is set).
pub fn validate_sizes(p: &CcoProblem, k: usize, l: usize, robust: bool) -> Result<(), Vec<SizeViolation>> {
    let minimal = if robust {
        min_robust_size(p.delta, &p.divergence())
    } else {
        Some(minimal_size(p.delta))
    };
    let mut out = Vec::new();
    for (set, given) in [("K", k), ("L", l)] {
        if minimal.map_or(true, |m| given < m) {
            out.push(SizeViolation {
                set: set.into(),
                given,
                minimal,
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Optional per-problem experiment defaults stored in the problem file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentDefaults {
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub v: Option<usize>,
    pub n: Option<usize>,
    pub paper_n: Option<usize>,
}

/// A loaded problem with its sampling distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub problem: CcoProblem,
    /// Training and calibration distribution.
    pub distribution: Distribution,
    /// Test distribution when it differs (distribution shift studies).
    pub test_distribution: Option<Distribution>,
    pub defaults: ExperimentDefaults,
}

impl ProblemInstance {
    pub fn test_dist(&self) -> &Distribution {
        self.test_distribution.as_ref().unwrap_or(&self.distribution)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default)]
    name: Option<String>,
    n: usize,
    d: usize,
    #[serde(default)]
    sense: Sense,
    objective: String,
    chance: Vec<String>,
    delta: f64,
    #[serde(default)]
    ineq: Vec<String>,
    #[serde(default)]
    eq: Vec<String>,
    bounds: Vec<[f64; 2]>,
    distribution: Distribution,
    #[serde(default)]
    test_distribution: Option<Distribution>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    divergence: Option<DivergenceKind>,
    #[serde(default)]
    chi: Option<f64>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    experiment: ExperimentDefaults,
}

/// Parses and validates a problem document.
pub fn load_problem_str(text: &str) -> Result<ProblemInstance, ProblemError> {
    let f: ProblemFile =
        serde_json::from_str(text).map_err(|e| ProblemError::Schema(e.to_string()))?;
    if !(f.delta > 0.0 && f.delta < 1.0) {
        return Err(ProblemError::Schema(format!(
            "delta {} outside (0, 1)",
            f.delta
        )));
    }
    let params: Params = f.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let opts = ParseOptions {
        n: Some(f.n),
        d: Some(f.d),
        params: Some(f.params.keys().cloned().collect()),
    };
    let px = |field: &str, text: &str| -> Result<Expr, ProblemError> {
        let err = |source| ProblemError::Expr {
            field: field.to_string(),
            source,
        };
        parse_with(text, &opts)
            .and_then(|e| e.resolve_params(&params))
            .map_err(err)
    };
    let list = |field: &str, v: &[String]| -> Result<Vec<Expr>, ProblemError> {
        v.iter()
            .enumerate()
            .map(|(i, t)| px(&format!("{field}[{i}]"), t))
            .collect()
    };
    let problem = CcoProblem {
        name: f.name.clone().unwrap_or_default(),
        n: f.n,
        d: f.d,
        sense: f.sense,
        objective: px("objective", &f.objective)?,
        chance: list("chance", &f.chance)?,
        delta: f.delta,
        ineq: list("ineq", &f.ineq)?,
        eq: list("eq", &f.eq)?,
        bounds: f.bounds.iter().map(|b| Interval::new(b[0], b[1])).collect(),
        epsilon: f.epsilon,
        divergence_kind: f.divergence.unwrap_or_default(),
        chi: f.chi.unwrap_or(0.0),
    };
    problem.validate()?;
    for dist in std::iter::once(&f.distribution).chain(f.test_distribution.as_ref()) {
        dist.validate()?;
        if dist.dim() != f.d {
            return Err(ProblemError::Invalid(format!(
                "distribution dimension {} does not match d = {}",
                dist.dim(),
                f.d
            )));
        }
    }
    Ok(ProblemInstance {
        problem,
        distribution: f.distribution,
        test_distribution: f.test_distribution,
        defaults: f.experiment,
    })
}

/// Reads and validates a problem file.
pub fn load_problem(path: &Path) -> Result<ProblemInstance, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_problem_str(&text)
}
