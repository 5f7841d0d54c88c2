//! Scenario approach (every sample enforced) and sample average
//! approximation (a fraction `1 − ω` enforced) encoders.

use crate::encode::{base_program, encode_indicator, DetProgram, EncodeError, Relation};
use crate::problem::CcoProblem;
use crate::quantile::ceil_tol;

/// Scenario approach: `fⱼ(x, yᵢ) ≤ −χ` for every sample and constraint.
pub fn encode_sa(p: &CcoProblem, train: &[Vec<f64>]) -> Result<DetProgram, EncodeError> {
    let mut prog = base_program(p, "sa");
    for y in train {
        for f in &p.chance {
            let e = f.substitute_samples(y).map_err(EncodeError::Sample)?;
            prog.add_constraint(e, Relation::Le, -p.chi);
        }
    }
    Ok(prog)
}

/// Cardinality threshold `⌈K(1 − ω)⌉` of the sample average approximation.
pub fn saa_threshold(count: usize, omega: f64) -> usize {
    ceil_tol(count as f64 * (1.0 - omega))
}

/// Sample average approximation: at least `⌈K(1 − ω)⌉` samples satisfy
/// `maxⱼ fⱼ(x, yᵢ) + ι + χ ≤ 0`, through the same big-M indicator rows as
/// the conformal encoding.
pub fn encode_saa(p: &CcoProblem, train: &[Vec<f64>], omega: f64, iota: f64) -> Result<DetProgram, EncodeError> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(EncodeError::Invalid(format!("omega {omega} outside (0, 1)")));
    }
    if !(iota >= 0.0 && iota.is_finite()) {
        return Err(EncodeError::Invalid(format!("iota {iota} must be >= 0")));
    }
    let threshold = saa_threshold(train.len(), omega);
    encode_indicator(p, train, threshold, iota + p.chi, "saa")
}
