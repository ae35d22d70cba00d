//! Stopping-time speed limiter used as the comparison controller.
//!
//! Reconstructed from a narrative description rather than the original
//! formulation: every cycle the velocity is capped so that stopping within
//! `t_stop` keeps the robot outside the protective distance even if the
//! obstacle closes in at full speed meanwhile.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    /// Stopping-time parameter (s).
    pub t_stop: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self { t_stop: 0.55 }
    }
}

/// Velocity bound from the separation margin.
pub fn separation_bound(distance: f64, d_protective: f64, v_obstacle: f64, t_stop: f64) -> f64 {
    ((distance - d_protective - v_obstacle * t_stop) / t_stop).max(0.0)
}

/// Inputs of one baseline cycle, in path-velocity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineInput {
    pub v: f64,
    pub distance: f64,
    pub d_protective: f64,
    /// Fastest declared obstacle speed.
    pub v_obstacle: f64,
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    /// Path length left to the goal.
    pub to_goal: f64,
    pub dt: f64,
}

/// Next velocity: the margin bound, the speed limit and a goal braking
/// curve, reached at most at the acceleration limits.
pub fn baseline_step(p: &BaselineParams, input: &BaselineInput) -> f64 {
    assert!(p.t_stop > 0.0, "t_stop must be positive");
    let goal = (2.0 * input.decel * input.to_goal.max(0.0)).sqrt();
    let bound = separation_bound(input.distance, input.d_protective, input.v_obstacle, p.t_stop)
        .min(input.v_max)
        .min(goal);
    let lo = (input.v - input.decel * input.dt).max(0.0);
    let hi = input.v + input.accel * input.dt;
    bound.clamp(lo, hi)
}
