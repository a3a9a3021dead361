//! Pass/fail bookkeeping shared by every certificate.

use serde::Serialize;

/// Default relative tolerance for solver certificates.
pub const CERTIFICATE_RTOL: f64 = 1e-8;
/// Default relative tolerance for checks that are exact up to rounding.
pub const EXACT_RTOL: f64 = 1e-12;

/// Stationarity only: the certified conditions are necessary, not sufficient.
pub const STATIONARITY_NOTE: &str =
    "certifies first-order necessary conditions (stationarity); local minimality is not checked";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    /// A check with no residual, decided by a predicate.
    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            residual: if pass { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass,
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}
