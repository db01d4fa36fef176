//! Error types shared across the crate. Each subsystem gets its own enum;
//! payloads carry whatever the caller needs to recover (partial
//! trajectories, best iterates, residual histories).

use nalgebra::DVector;
use thiserror::Error;

/// A scalar-field or supplier closure failed at a point.
#[derive(Clone, Debug, Error)]
#[error("evaluation failed: {0}")]
pub struct EvalError(pub String);

#[derive(Clone, Debug, Error)]
pub enum ChartError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("coordinate {index} = {value} outside domain box [{lo}, {hi}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid chart: structure tensor breaks antisymmetry at ({a},{b},{c}), |C_ab^c + C_ba^c| = {defect:.3e}")]
    AntisymmetryViolation {
        a: usize,
        b: usize,
        c: usize,
        defect: f64,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t:.6e} (h < h_min); partial trajectory retained")]
    StepUnderflow {
        t: f64,
        partial: Box<crate::dynamics::Trajectory>,
    },
    #[error("state became non-finite at t = {t:.6e}; last finite state retained")]
    Diverged {
        t: f64,
        partial: Box<crate::dynamics::Trajectory>,
    },
    #[error("step budget exhausted at t = {t:.6e}")]
    MaxStepsExceeded {
        t: f64,
        partial: Box<crate::dynamics::Trajectory>,
    },
    #[error("unknown monitor '{0}'")]
    UnknownMonitor(String),
    #[error("duplicate monitor name '{0}'")]
    DuplicateMonitor(String),
    #[error("series length mismatch: {0}")]
    LengthMismatch(String),
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("stationarity solve did not converge after {iterations} iterations (|grad| = {grad_norm:.3e})")]
    NoSolution {
        best: DVector<f64>,
        grad_norm: f64,
        iterations: usize,
    },
    #[error("control regularity violated: {0}")]
    RegularityViolation(String),
    #[error("closed-form feedback requested but no quadratic hint present")]
    MissingQuadraticHint,
    #[error("model unsupported for this operation: {0}")]
    UnsupportedModel(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model '{0}' (expected one of rigid-body, action-so3, s2-steering, habitat)")]
    UnknownModel(String),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("unknown parameter '{0}' for this model")]
    UnknownParameter(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Chart(#[from] ChartError),
}

#[derive(Debug, Error)]
pub enum ShootError {
    #[error("shooting did not converge: best |residual| = {residual:.3e} after {restarts} restart(s)")]
    NoConvergence {
        best_theta: DVector<f64>,
        residual: f64,
        restarts: usize,
        history: Vec<f64>,
    },
    #[error("singular shooting Jacobian")]
    SingularJacobian,
    #[error("invalid shooting problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}
