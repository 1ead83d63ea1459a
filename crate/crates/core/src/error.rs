use thiserror::Error;

use crate::solver::TransportPlan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("direction hint is (nearly) parallel to the base point: |projection| = {0:e}")]
    DegenerateHint(f64),

    #[error("grid resolution must be at least 2, got {0}")]
    BadResolution(usize),

    #[error("not a point on the sphere: {0}")]
    InvalidPoint(String),

    #[error("bad cost parameter: {0}")]
    BadParam(String),

    #[error("unknown cost `{0}`")]
    UnknownCost(String),

    #[error("ambiguous classification: {0}")]
    AmbiguousClassification(String),

    #[error("closed-form z* = {closed_form} disagrees with located root {located} (tol {tol:e})")]
    ClosedFormMismatch {
        closed_form: f64,
        located: f64,
        tol: f64,
    },

    #[error("|p| = {r} outside the map domain [0, {limit})")]
    OutOfDomain { r: f64, limit: f64 },

    #[error("cost `{0}` leads to the beta(0) = pi branch, which is not supported")]
    UnsupportedBranch(String),

    #[error("|p| = {r} exceeds p* = {p_star}: the closed-form map is complex valued")]
    ComplexMapping { r: f64, p_star: f64 },

    #[error("mixed Hessian formulas disagree at r = {r}: {detail}")]
    CrossCheckFailure { r: f64, detail: String },

    #[error("operation requires {expected} geometry")]
    WrongGeometry { expected: &'static str },

    #[error("sign convention is not calibrated: {0}")]
    ConventionUncalibrated(String),

    #[error("grid spacing {spacing:.3e} too coarse for sigma {sigma:.3e}")]
    UnderResolved { spacing: f64, sigma: f64 },

    #[error("density is zero at node {0}")]
    ZeroDensity(usize),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("support mask is infeasible: {0}")]
    InfeasibleMask(String),

    #[error("entropic solver did not converge: marginal error {marginal_error:e} after {iterations} iterations")]
    NotConverged {
        marginal_error: f64,
        iterations: usize,
        best: Box<TransportPlan>,
    },

    #[error("root finding failed: {0}")]
    RootFinding(String),
}

impl Error {
    /// Errors that signal a mathematically infeasible input rather than a
    /// runtime failure.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::OutOfDomain { .. } | Error::ComplexMapping { .. } | Error::InfeasibleMask(_)
        )
    }
}
