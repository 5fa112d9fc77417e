//! The guide-wire forward model: rod solve followed by segmentation.

use alloc::vec::Vec;

use crate::error::{config_err, Error, ForwardError, Result};
use crate::imaging::{self, Camera, Metric};
use crate::problem::ForwardModel;
use crate::rod::{self, RodConfig, RodState};

/// Affine map between nondimensional parameters `u` and physical
/// `(density [kg/m³], Young's modulus [Pa])`: `physical = center + width · u`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ParameterScaling {
    pub center: [f64; 2],
    pub width: [f64; 2],
}

impl Default for ParameterScaling {
    fn default() -> Self {
        Self {
            center: [1000.0, 2.0e6],
            width: [300.0, 6.0e5],
        }
    }
}

impl ParameterScaling {
    pub fn validate(&self) -> Result<()> {
        if self
            .center
            .iter()
            .chain(&self.width)
            .any(|v| !v.is_finite())
            || self.width.iter().any(|w| !(*w > 0.0))
        {
            return Err(config_err!(
                "parameter scaling needs finite centers and positive widths"
            ));
        }
        Ok(())
    }

    pub fn to_physical(&self, u: &[f64]) -> core::result::Result<[f64; 2], ForwardError> {
        if u.len() != 2 {
            return Err(ForwardError::Domain(alloc::format!(
                "expected 2 parameters, got {}",
                u.len()
            )));
        }
        Ok([
            self.center[0] + self.width[0] * u[0],
            self.center[1] + self.width[1] * u[1],
        ])
    }

    pub fn to_unit(&self, physical: [f64; 2]) -> [f64; 2] {
        [
            (physical[0] - self.center[0]) / self.width[0],
            (physical[1] - self.center[1]) / self.width[1],
        ]
    }
}

/// `G(u) = segment(solve_rod(u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuideWireModel {
    pub rod: RodConfig,
    pub camera: Camera,
    pub sigma: u32,
    pub metric: Metric,
    pub scaling: ParameterScaling,
}

impl GuideWireModel {
    pub fn new(
        rod: RodConfig,
        camera: Camera,
        sigma: u32,
        metric: Metric,
        scaling: ParameterScaling,
    ) -> Result<Self> {
        rod.validate()?;
        camera.validate()?;
        scaling.validate()?;
        if !(1..=255).contains(&sigma) {
            return Err(config_err!("threshold must lie in 1..=255, got {sigma}"));
        }
        Ok(Self {
            rod,
            camera,
            sigma,
            metric,
            scaling,
        })
    }

    /// Final rod state for nondimensional parameters `u`.
    pub fn solve(&self, u: &[f64]) -> core::result::Result<RodState, ForwardError> {
        rod::solve_rod(&self.scaling.to_physical(u)?, &self.rod)
    }

    pub fn observe_state(&self, state: &RodState) -> core::result::Result<Vec<f64>, ForwardError> {
        imaging::segment(state, &self.camera, self.sigma, self.metric).map_err(|e| match e {
            Error::Degenerate(m) => ForwardError::Degenerate(m),
            other => ForwardError::Other(alloc::format!("{other}")),
        })
    }
}

impl ForwardModel for GuideWireModel {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.camera.n_pixels()
    }

    fn evaluate(&self, u: &[f64]) -> core::result::Result<Vec<f64>, ForwardError> {
        self.observe_state(&self.solve(u)?)
    }
}
