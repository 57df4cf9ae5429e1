//! Shared numerical tolerances.

/// Allowed drift of a probability histogram's total from 1.
pub const PROBABILITY_SUM: f64 = 1e-10;

/// Absolute marginal tolerance for plans returned by exact solvers.
pub const EXACT_MARGINAL: f64 = 1e-9;

/// Relative dual feasibility slack; scaled by `1 + max|C|`.
pub const DUAL_SLACK: f64 = 1e-9;

/// Plan entries above this are treated as support for slackness checks.
pub const SUPPORT: f64 = 1e-12;

/// Default summed l1 marginal tolerance for Sinkhorn-type solvers.
pub const SINKHORN_TOL: f64 = 1e-9;

/// Dual feasibility slack for a cost matrix with the given sup-norm.
pub fn dual_slack(cost_sup: f64) -> f64 {
    DUAL_SLACK * (1.0 + cost_sup)
}
