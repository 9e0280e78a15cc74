//! Policy iteration for continuous-time linear quadratic regulation: exact
//! Kleinman iteration, a disturbance-injected variant for robustness
//! experiments, and an off-policy data-driven variant that learns from
//! sampled state and input trajectories.

pub mod error;
pub mod lyapunov;
pub mod matops;
pub mod policy_iteration;
pub mod riccati;

pub use error::{Error, Result};
pub use matops::SymMatrix;
pub use riccati::{AreSolution, LqrCost, LtiSystem};
pub mod datadriven;
pub mod report;
pub mod cli;
