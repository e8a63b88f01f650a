//! Replica-symmetric predictions for knowledge distillation from a
//! regularized logistic-regression teacher to a sparse linear student on
//! two-cluster Gaussian-mixture data, together with the finite-size
//! empirical-risk-minimization experiments that check them.

pub mod error;
pub mod estimators;
pub mod model;
pub mod prox;
pub mod quadrature;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use estimators::{generalization_error, MacroState};
pub use model::{Dataset, ModelParams};
pub use quadrature::QuadratureGrid;
