//! Continuous-time ensemble Kalman inversion with Tikhonov regularisation,
//! variance inflation and randomized data subsampling, together with a
//! discrete Cosserat rod and an image-based observation operator.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod imaging;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod problem;
pub mod rod;
pub mod subsample;

pub use nalgebra;

pub use ensemble::{
    cross_covariance, ensemble_mean, ensemble_spread, parameter_covariance, Ensemble,
    ParameterVector,
};
pub use error::{Error, ForwardError, Result};
pub use flow::{FailurePolicy, FlowConfig, FlowVariant, Trajectory};
pub use problem::{ForwardModel, InverseProblem, NoiseModel, PriorModel};
