use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, ActionSpec, Spaces, StepOutcome};
use crate::rng::Rng;

/// Action indices: 0 up, 1 right, 2 down, 3 left. `y` grows downwards.
pub const GRID_ACTIONS: usize = 4;
const MOVES: [(i64, i64); GRID_ACTIONS] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// Slippery grid world. With probability `1 - slip_p` the agent moves as
/// intended; otherwise it slides to one of the two perpendicular neighbours
/// with equal probability. Moves off the grid leave the agent in place.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSlipSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub start: [usize; 2],
    /// Defaults to the bottom-right corner.
    #[serde(default)]
    pub goal: Option<[usize; 2]>,
    pub slip_p: f64,
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    /// Absorbing hazard cells.
    #[serde(default)]
    pub pits: Vec<[usize; 2]>,
    #[serde(default = "default_pit_reward")]
    pub pit_reward: f64,
}

fn default_step_reward() -> f64 {
    -1.0
}

fn default_goal_reward() -> f64 {
    20.0
}

fn default_pit_reward() -> f64 {
    -20.0
}

/// Exact tabular description: `P(s' | s, a)` plus the reward collected on
/// entering each state.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed `[a][s][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub entry_reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub start: usize,
}

impl TabularModel {
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[a][s][next]
    }
}

impl GridSlipSpec {
    pub fn new(width: usize, height: usize, slip_p: f64) -> Self {
        GridSlipSpec {
            width,
            height,
            start: [0, 0],
            goal: None,
            slip_p,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
            pits: Vec::new(),
            pit_reward: default_pit_reward(),
        }
    }

    pub fn with_pits(mut self, pits: Vec<[usize; 2]>) -> Self {
        self.pits = pits;
        self
    }

    pub fn goal_cell(&self) -> [usize; 2] {
        self.goal
            .unwrap_or([self.width.saturating_sub(1), self.height.saturating_sub(1)])
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, cell: [usize; 2]) -> usize {
        cell[1] * self.width + cell[0]
    }

    pub fn cell(&self, index: usize) -> [usize; 2] {
        [index % self.width, index / self.width]
    }

    fn inside(&self, c: [usize; 2]) -> bool {
        c[0] < self.width && c[1] < self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_states() < 2 {
            return Err(Error::config("width", "grid needs at least two cells"));
        }
        if !(0.0..=1.0).contains(&self.slip_p) {
            return Err(Error::config(
                "slip_p",
                format!("{} is outside [0, 1]", self.slip_p),
            ));
        }
        let goal = self.goal_cell();
        if !self.inside(self.start) {
            return Err(Error::config("start", "outside the grid"));
        }
        if !self.inside(goal) {
            return Err(Error::config("goal", "outside the grid"));
        }
        if self.start == goal {
            return Err(Error::config("goal", "must differ from start"));
        }
        for &p in &self.pits {
            if !self.inside(p) || p == self.start || p == goal {
                return Err(Error::config("pits", format!("invalid pit cell {p:?}")));
            }
        }
        for (name, v) in [
            ("step_reward", self.step_reward),
            ("goal_reward", self.goal_reward),
            ("pit_reward", self.pit_reward),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn spaces(&self) -> Spaces {
        Spaces {
            state_dim: self.n_states(),
            action: ActionSpec::Discrete(GRID_ACTIONS),
        }
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        v[index] = 1.0;
        v
    }

    pub(crate) fn initial_state(&self) -> Vec<f64> {
        self.one_hot(self.index(self.start))
    }

    pub fn is_terminal(&self, index: usize) -> bool {
        let c = self.cell(index);
        c == self.goal_cell() || self.pits.contains(&c)
    }

    pub fn entry_reward(&self, index: usize) -> f64 {
        let c = self.cell(index);
        if c == self.goal_cell() {
            self.step_reward + self.goal_reward
        } else if self.pits.contains(&c) {
            self.step_reward + self.pit_reward
        } else {
            self.step_reward
        }
    }

    /// Cell reached by moving in `direction` from `index`.
    pub fn neighbour(&self, index: usize, direction: usize) -> usize {
        let [x, y] = self.cell(index);
        let (dx, dy) = MOVES[direction];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            index
        } else {
            self.index([nx as usize, ny as usize])
        }
    }

    /// Intended direction and the two perpendicular slip directions.
    fn outcomes(&self, action: usize) -> [(usize, f64); 3] {
        let p = self.slip_p;
        [
            (action, 1.0 - p),
            ((action + 1) % GRID_ACTIONS, p / 2.0),
            ((action + 3) % GRID_ACTIONS, p / 2.0),
        ]
    }

    /// Decodes a one-hot state vector into its cell index.
    pub fn state_index(&self, state: &[f64]) -> Result<usize> {
        let mut idx = None;
        for (i, &v) in state.iter().enumerate() {
            if v == 1.0 && idx.is_none() {
                idx = Some(i);
            } else if v != 0.0 {
                return Err(Error::domain("grid state is not one-hot"));
            }
        }
        idx.ok_or_else(|| Error::domain("grid state is not one-hot"))
    }

    pub(crate) fn step(
        &self,
        state: &[f64],
        action: &Action,
        rng: &mut Rng,
    ) -> Result<StepOutcome> {
        let a = match action {
            Action::Discrete(a) if *a < GRID_ACTIONS => *a,
            _ => {
                return Err(Error::domain(format!(
                    "grid action must be an index below {GRID_ACTIONS}, got {action:?}"
                )))
            }
        };
        let s = self.state_index(state)?;
        if self.is_terminal(s) {
            return Ok(StepOutcome {
                next_state: state.to_vec(),
                reward: 0.0,
                terminal: true,
            });
        }
        let u: f64 = rng.gen();
        let [(d0, p0), (d1, p1), (d2, _)] = self.outcomes(a);
        let direction = if u < p0 {
            d0
        } else if u < p0 + p1 {
            d1
        } else {
            d2
        };
        let next = self.neighbour(s, direction);
        Ok(StepOutcome {
            next_state: self.one_hot(next),
            reward: self.entry_reward(next),
            terminal: self.is_terminal(next),
        })
    }

    pub fn tabular_model(&self) -> TabularModel {
        let n = self.n_states();
        let mut transitions = vec![vec![vec![0.0; n]; n]; GRID_ACTIONS];
        for (a, table) in transitions.iter_mut().enumerate() {
            for (s, row) in table.iter_mut().enumerate() {
                if self.is_terminal(s) {
                    row[s] = 1.0;
                    continue;
                }
                for (d, p) in self.outcomes(a) {
                    row[self.neighbour(s, d)] += p;
                }
            }
        }
        TabularModel {
            n_states: n,
            n_actions: GRID_ACTIONS,
            transitions,
            entry_reward: (0..n).map(|s| self.entry_reward(s)).collect(),
            terminal: (0..n).map(|s| self.is_terminal(s)).collect(),
            start: self.index(self.start),
        }
    }
}
