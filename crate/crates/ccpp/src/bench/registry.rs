//! Bundled case studies.

use crate::problem::{load_problem_str, ProblemError, ProblemInstance};

const CASE1: &str = include_str!("../../problems/case1.json");
const CONTROL: &str = include_str!("../../problems/control.json");
const PORTFOLIO: &str = include_str!("../../problems/portfolio.json");
const JCCO: &str = include_str!("../../problems/jcco.json");

/// Names of the bundled problems.
pub const BUNDLED: [&str; 4] = ["case1", "control", "portfolio", "jcco"];

/// Source text of a bundled problem; a trailing `.json` is ignored.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name.strip_suffix(".json").unwrap_or(name) {
        "case1" => Some(CASE1),
        "control" => Some(CONTROL),
        "portfolio" => Some(PORTFOLIO),
        "jcco" => Some(JCCO),
        _ => None,
    }
}

/// Loads a bundled problem by name.
pub fn bundled(name: &str) -> Option<Result<ProblemInstance, ProblemError>> {
    bundled_source(name).map(load_problem_str)
}

/// Final position along one axis of the double integrator after `horizon`
/// steps from rest, unrolled in the inputs `x[2t + axis]` and the noise
/// components `y[4t + 2·axis]` (position) and `y[4t + 2·axis + 1]` (velocity).
fn final_position(horizon: usize, axis: usize) -> String {
    let mut terms = Vec::new();
    for s in 0..horizon {
        let lag = horizon - 1 - s;
        terms.push(format!("{:?}*x[{}]", lag as f64 + 0.5, 2 * s + axis));
        terms.push(format!("y[{}]", 4 * s + 2 * axis));
        if lag > 0 {
            terms.push(format!("{lag}*y[{}]", 4 * s + 2 * axis + 1));
        }
    }
    terms.join(" + ")
}

/// Reach-avoid control problem with the dynamics unrolled symbolically:
/// minimize `Σ‖uₜ‖²` so that the final position lies within distance 1 of
/// `(5, 5)` with probability at least `1 − δ`, under Laplace(0, 0.02) noise.
pub fn control_document(horizon: usize, delta: f64) -> serde_json::Value {
    let chance = format!(
        "sumsq({} - 5, {} - 5) - 1",
        final_position(horizon, 0),
        final_position(horizon, 1)
    );
    let objective = (0..2 * horizon)
        .map(|i| format!("x[{i}]^2"))
        .collect::<Vec<_>>()
        .join(" + ");
    serde_json::json!({
        "name": "control",
        "n": 2 * horizon,
        "d": 4 * horizon,
        "objective": objective,
        "chance": [chance],
        "delta": delta,
        "bounds": vec![[-2, 2]; 2 * horizon],
        "distribution": {"kind": "iid", "count": 4 * horizon,
            "component": {"kind": "laplace", "location": 0, "scale": 0.02}},
        "experiment": {"k": 70, "l": 200, "v": 1000, "n": 20, "paper_n": 100}
    })
}
