use serde::{Deserialize, Serialize};

use super::clamp_continuous;
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionSpec, Spaces, StepOutcome};

/// One-dimensional car on a straight track. State is `(position, velocity)`,
/// the action a thrust in `[-1, 1]`. Explicit Euler:
/// `v' = v + (thrust_gain·u − μ·v)·dt`, `x' = x + v·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionCarSpec {
    pub friction_mu: f64,
    #[serde(default = "default_thrust_gain")]
    pub thrust_gain: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_track_length")]
    pub track_length: f64,
    /// Exceeding this speed ends the episode with `overspeed_penalty`.
    #[serde(default = "default_velocity_cap")]
    pub velocity_cap: f64,
    #[serde(default = "default_overspeed_penalty")]
    pub overspeed_penalty: f64,
}

fn default_thrust_gain() -> f64 {
    2.0
}
fn default_dt() -> f64 {
    0.05
}
fn default_track_length() -> f64 {
    10.0
}
fn default_velocity_cap() -> f64 {
    3.0
}
fn default_overspeed_penalty() -> f64 {
    -50.0
}

impl FrictionCarSpec {
    pub fn new(friction_mu: f64) -> Self {
        FrictionCarSpec {
            friction_mu,
            thrust_gain: default_thrust_gain(),
            dt: default_dt(),
            track_length: default_track_length(),
            velocity_cap: default_velocity_cap(),
            overspeed_penalty: default_overspeed_penalty(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.friction_mu >= 0.0) || !self.friction_mu.is_finite() {
            return Err(Error::config("friction_mu", "must be a nonnegative real"));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::config("dt", "must lie in (0, 0.1]"));
        }
        if !(self.track_length > 0.0) {
            return Err(Error::config("track_length", "must be positive"));
        }
        if !(self.velocity_cap > 0.0) {
            return Err(Error::config("velocity_cap", "must be positive"));
        }
        if !self.thrust_gain.is_finite() {
            return Err(Error::config("thrust_gain", "must be finite"));
        }
        Ok(())
    }

    pub fn spaces(&self) -> Spaces {
        Spaces {
            state_dim: 2,
            action: ActionSpec::ContinuousBox {
                lo: vec![-1.0],
                hi: vec![1.0],
            },
        }
    }

    pub(crate) fn step(&self, state: &[f64], action: &Action) -> Result<StepOutcome> {
        let u = clamp_continuous(action, &[-1.0], &[1.0])?[0];
        let (x, v) = (state[0], state[1]);
        let v_next = v + (self.thrust_gain * u - self.friction_mu * v) * self.dt;
        let x_next = x + v * self.dt;
        let mut reward = x_next - x;
        let mut terminal = x_next >= self.track_length;
        if v_next.abs() > self.velocity_cap {
            reward += self.overspeed_penalty;
            terminal = true;
        }
        Ok(StepOutcome {
            next_state: vec![x_next, v_next],
            reward,
            terminal,
        })
    }

    /// Distance covered in `steps` steps at full thrust, ignoring the
    /// velocity cap; bounded by the track length.
    pub fn full_thrust_progress(&self, steps: usize) -> f64 {
        let (mut x, mut v) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            let v_next = v + (self.thrust_gain - self.friction_mu * v) * self.dt;
            x += v * self.dt;
            v = v_next;
            if x >= self.track_length {
                return self.track_length;
            }
        }
        x
    }
}
