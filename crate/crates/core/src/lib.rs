//! Hamiltonian optimal-control dynamics on the duals of Lie algebroids.
//!
//! The crate provides, bottom to top:
//!
//! - [`chart`]: local-coordinate algebroid data (anchor, structure
//!   functions) and sampled certification of the structure equations;
//! - [`dynamics`]: the canonical linear Poisson bracket on the dual
//!   bundle, Hamiltonian vector fields, fixed and adaptive Runge-Kutta
//!   integration with invariant monitoring, and drift reports;
//! - [`pontryagin`]: control systems, the Pontryagin Hamiltonian, optimal
//!   feedback by stationarity, the reduced Hamiltonian, and the residuals
//!   that certify optimality along trajectories;
//! - [`models`]: the ready-to-run model zoo (free rigid body, so(3) action
//!   on R^3, sphere steering with configuration-dependent inertia, 1-D
//!   habitat);
//! - [`shooting`]: indirect single shooting for fixed-endpoint steering;
//! - [`cli`]: the `algctl` command surface with CSV and SVG outputs.

pub mod chart;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod field;
pub(crate) mod la;
pub mod models;
pub mod output;
pub mod pontryagin;
pub mod shooting;
pub mod tensor;

#[cfg(test)]
pub(crate) mod test_charts;

pub use chart::{AlgebroidChart, DomainBox, DualPoint, VerificationReport};
pub use dynamics::{
    drift_report, hamiltonian_vector_field, integrate, poisson_bracket, IntegratorConfig,
    Projection, Scheme, Trajectory,
};
pub use error::{
    ChartError, DynamicsError, EvalError, FeedbackError, ModelError, ShootError,
};
pub use field::ScalarField;
pub use models::ModelBundle;
