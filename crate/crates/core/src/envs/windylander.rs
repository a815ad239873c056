use serde::{Deserialize, Serialize};

use super::clamp_continuous;
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionSpec, Spaces, StepOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LanderActionMode {
    #[default]
    Continuous2d,
    /// The nine combinations of `{-1, 0, 1}²`, index `3·(main+1) + (lateral+1)`.
    Discrete9,
}

/// Point-mass lander descending onto a pad at the origin under constant
/// gravity and a constant horizontal wind. State `(x, y, vx, vy)`; action
/// `(main, lateral)` in `[-1, 1]²` where the main engine only pushes for
/// positive throttle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindyLanderSpec {
    pub gravity_g: f64,
    pub wind_f: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_pad_halfwidth")]
    pub pad_halfwidth: f64,
    #[serde(default = "default_crash_speed")]
    pub crash_speed: f64,
    #[serde(default)]
    pub action_mode: LanderActionMode,
    #[serde(default = "default_main_gain")]
    pub main_gain: f64,
    #[serde(default = "default_lateral_gain")]
    pub lateral_gain: f64,
    #[serde(default = "default_start_height")]
    pub start_height: f64,
    /// Per-step penalty per unit distance from the pad.
    #[serde(default = "default_shaping")]
    pub shaping: f64,
    #[serde(default = "default_world_halfwidth")]
    pub world_halfwidth: f64,
}

fn default_dt() -> f64 {
    0.05
}
fn default_pad_halfwidth() -> f64 {
    1.0
}
fn default_crash_speed() -> f64 {
    2.0
}
fn default_main_gain() -> f64 {
    20.0
}
fn default_lateral_gain() -> f64 {
    12.0
}
fn default_start_height() -> f64 {
    5.0
}
fn default_shaping() -> f64 {
    0.1
}
fn default_world_halfwidth() -> f64 {
    10.0
}

pub const SOFT_LANDING_REWARD: f64 = 100.0;
pub const CRASH_REWARD: f64 = -100.0;

impl WindyLanderSpec {
    pub fn new(gravity_g: f64, wind_f: f64) -> Self {
        WindyLanderSpec {
            gravity_g,
            wind_f,
            dt: default_dt(),
            pad_halfwidth: default_pad_halfwidth(),
            crash_speed: default_crash_speed(),
            action_mode: LanderActionMode::default(),
            main_gain: default_main_gain(),
            lateral_gain: default_lateral_gain(),
            start_height: default_start_height(),
            shaping: default_shaping(),
            world_halfwidth: default_world_halfwidth(),
        }
    }

    pub fn discrete(mut self) -> Self {
        self.action_mode = LanderActionMode::Discrete9;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(-12.0..=-2.0).contains(&self.gravity_g) {
            return Err(Error::config(
                "gravity_g",
                format!("{} is outside [-12, -2]", self.gravity_g),
            ));
        }
        if !(0.0..=10.0).contains(&self.wind_f) {
            return Err(Error::config(
                "wind_f",
                format!("{} is outside [0, 10]", self.wind_f),
            ));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::config("dt", "must lie in (0, 0.1]"));
        }
        for (name, v) in [
            ("pad_halfwidth", self.pad_halfwidth),
            ("crash_speed", self.crash_speed),
            ("main_gain", self.main_gain),
            ("lateral_gain", self.lateral_gain),
            ("start_height", self.start_height),
            ("world_halfwidth", self.world_halfwidth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(self.shaping >= 0.0) {
            return Err(Error::config("shaping", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn spaces(&self) -> Spaces {
        let action = match self.action_mode {
            LanderActionMode::Continuous2d => ActionSpec::ContinuousBox {
                lo: vec![-1.0, -1.0],
                hi: vec![1.0, 1.0],
            },
            LanderActionMode::Discrete9 => ActionSpec::Discrete(9),
        };
        Spaces {
            state_dim: 4,
            action,
        }
    }

    pub(crate) fn initial_state(&self) -> Vec<f64> {
        vec![0.0, self.start_height, 0.0, 0.0]
    }

    fn throttle(&self, action: &Action) -> Result<[f64; 2]> {
        match self.action_mode {
            LanderActionMode::Continuous2d => {
                let u = clamp_continuous(action, &[-1.0, -1.0], &[1.0, 1.0])?;
                Ok([u[0], u[1]])
            }
            LanderActionMode::Discrete9 => match action {
                Action::Discrete(k) if *k < 9 => Ok([(k / 3) as f64 - 1.0, (k % 3) as f64 - 1.0]),
                _ => Err(Error::domain(format!(
                    "lander action must be an index below 9, got {action:?}"
                ))),
            },
        }
    }

    pub(crate) fn step(&self, state: &[f64], action: &Action) -> Result<StepOutcome> {
        let [main, lateral] = self.throttle(action)?;
        let (x, y, vx, vy) = (state[0], state[1], state[2], state[3]);
        let ax = self.wind_f + self.lateral_gain * lateral;
        let ay = self.gravity_g + self.main_gain * main.max(0.0);
        let next = vec![
            x + vx * self.dt,
            y + vy * self.dt,
            vx + ax * self.dt,
            vy + ay * self.dt,
        ];
        let dist = (next[0] * next[0] + next[1].max(0.0).powi(2)).sqrt();
        let mut reward = -self.shaping * dist;
        let mut terminal = false;
        if next[1] <= 0.0 {
            terminal = true;
            let speed = (next[2] * next[2] + next[3] * next[3]).sqrt();
            reward += if next[0].abs() <= self.pad_halfwidth && speed <= self.crash_speed {
                SOFT_LANDING_REWARD
            } else {
                CRASH_REWARD
            };
        } else if next[0].abs() > self.world_halfwidth || next[1] > 3.0 * self.start_height {
            terminal = true;
            reward += CRASH_REWARD;
        }
        Ok(StepOutcome {
            next_state: next,
            reward,
            terminal,
        })
    }
}
