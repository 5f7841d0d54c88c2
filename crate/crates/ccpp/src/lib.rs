//! Conformal predictive programming for chance-constrained optimization.

pub mod expr;
pub mod problem;
pub mod quantile;
pub mod robust;
pub mod encode;
pub mod solve;
pub mod baselines;
pub mod bench;
