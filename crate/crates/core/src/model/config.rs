use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::GRAVITY;

/// Which diameter feeds the rolling-resistance bound μ_r·(d/2)·λ_n for a
/// contacting pair. The effective pair diameter is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RollingRadiusRule {
    #[default]
    Effective,
    Min,
    Mean,
}

/// Stepper and PGS settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Timestep Δt (s).
    pub timestep: f64,
    /// PGS sweep count N_it.
    pub iterations: u32,
    /// Error tolerance ε used by the planner rules.
    pub error_tolerance: f64,
    /// Contact damping γ_n in multiples of Δt (4.5 critically damps resting
    /// contacts within a few steps).
    pub damping_steps: f64,
    /// Hertz exponent e_H: 5/4 for the Hertz mapping, 1 for linear stiffness.
    pub hertz_exponent: f64,
    /// Normal approach speed (m/s) above which the Newton impact pass runs.
    pub impact_velocity_threshold: f64,
    /// Optional PGS early exit: stop sweeping when the largest multiplier
    /// update, in force units (N), falls below this.
    pub residual_exit: Option<f64>,
    pub rolling_radius_rule: RollingRadiusRule,
}

impl SolverConfig {
    /// Config for a given timestep with the bench defaults: ε = 0.02,
    /// γ_n = 4.5Δt, Hertz exponent 5/4, impact threshold well above one-step
    /// gravity accumulation (20·g·Δt).
    pub fn with_timestep(timestep: f64, iterations: u32) -> Self {
        SolverConfig {
            timestep,
            iterations,
            error_tolerance: 0.02,
            damping_steps: 4.5,
            hertz_exponent: 1.25,
            impact_velocity_threshold: 20.0 * GRAVITY * timestep,
            residual_exit: None,
            rolling_radius_rule: RollingRadiusRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestep > 0.0) {
            return Err(Error::invalid(format!("timestep must be > 0, got {}", self.timestep)));
        }
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if !(self.error_tolerance > 0.0) {
            return Err(Error::invalid("error_tolerance must be > 0"));
        }
        if !(self.hertz_exponent > 0.0) {
            return Err(Error::invalid("hertz_exponent must be > 0"));
        }
        Ok(())
    }

    /// Contact damping time γ_n (s).
    pub fn damping_time(&self) -> f64 {
        self.damping_steps * self.timestep
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::with_timestep(1e-4, 100)
    }
}
