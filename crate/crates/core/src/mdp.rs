//! Task abstraction shared by environments, trainers and adapters.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::knowledge::{Policy, QFunction};
use crate::rng::{self, Rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GridSlip,
    FrictionCar,
    WindyLander,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpec {
    Discrete(usize),
    ContinuousBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl ActionSpec {
    pub fn continuous(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "action_spec",
                "lo and hi must be nonempty and equally long",
            ));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::config(
                "action_spec",
                "need lo[d] < hi[d] in every dimension",
            ));
        }
        Ok(ActionSpec::ContinuousBox { lo, hi })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpec::Discrete(_))
    }

    pub fn num_actions(&self) -> Option<usize> {
        match self {
            ActionSpec::Discrete(n) => Some(*n),
            ActionSpec::ContinuousBox { .. } => None,
        }
    }

    /// Width of the action vector fed to networks: one-hot for discrete
    /// actions, the raw vector for continuous ones.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpec::Discrete(n) => *n,
            ActionSpec::ContinuousBox { lo, .. } => lo.len(),
        }
    }

    pub fn encode(&self, action: &Action) -> Result<Vec<f64>> {
        match (self, action) {
            (ActionSpec::Discrete(n), Action::Discrete(a)) if a < n => {
                let mut v = vec![0.0; *n];
                v[*a] = 1.0;
                Ok(v)
            }
            (ActionSpec::ContinuousBox { lo, .. }, Action::Continuous(x))
                if x.len() == lo.len() =>
            {
                Ok(x.clone())
            }
            _ => Err(Error::domain(format!(
                "action {action:?} does not fit {self:?}"
            ))),
        }
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Action {
        match self {
            ActionSpec::Discrete(n) => Action::Discrete(rng.gen_range(0..*n)),
            ActionSpec::ContinuousBox { lo, hi } => Action::Continuous(
                lo.iter()
                    .zip(hi)
                    .map(|(&l, &h)| rng.gen_range(l..h))
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

/// State and action spaces a piece of knowledge was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spaces {
    pub state_dim: usize,
    pub action: ActionSpec,
}

impl Spaces {
    pub fn check_compatible(&self, other: &Spaces) -> Result<()> {
        if self != other {
            return Err(Error::domain(format!(
                "space mismatch: knowledge expects {self:?}, task provides {other:?}"
            )));
        }
        Ok(())
    }

    pub fn encode_state_action(&self, state: &[f64], action: &Action) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::domain(format!(
                "state has dimension {}, expected {}",
                state.len(),
                self.state_dim
            )));
        }
        let mut x = state.to_vec();
        x.extend(self.action.encode(action)?);
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Episode ended here, either in a terminal state or at the step cap.
    pub done: bool,
    /// The episode was cut by the step cap rather than reaching a terminal
    /// state; bootstrapped targets should still use `next_state`.
    pub truncated: bool,
}

impl TransitionSample {
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<TransitionSample>,
    return_undiscounted: f64,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: TransitionSample) {
        self.return_undiscounted += sample.reward;
        self.samples.push(sample);
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TransitionSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn return_undiscounted(&self) -> f64 {
        self.return_undiscounted
    }

    /// Discounted returns-to-go `G_t = Σ_k γ^k r_{t+k}`.
    pub fn returns_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.samples.len()];
        let mut acc = 0.0;
        for (i, s) in self.samples.iter().enumerate().rev() {
            acc = s.reward + gamma * acc;
            out[i] = acc;
        }
        out
    }
}

/// A parameterized MDP instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskHandle {
    env: EnvSpec,
    seed: u64,
    episode_cap: usize,
}

impl TaskHandle {
    pub fn new(env: EnvSpec, seed: u64, episode_cap: usize) -> Result<Self> {
        env.validate()?;
        if episode_cap == 0 {
            return Err(Error::config("episode_cap", "must be positive"));
        }
        Ok(TaskHandle {
            env,
            seed,
            episode_cap,
        })
    }

    /// Rebuilds a handle of `kind` from named context parameters, using
    /// `base` for every non-context field.
    pub fn from_context(
        base: &EnvSpec,
        params: &BTreeMap<String, f64>,
        seed: u64,
        episode_cap: usize,
    ) -> Result<Self> {
        Self::new(base.with_context(params)?, seed, episode_cap)
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn env_kind(&self) -> EnvKind {
        self.env.kind()
    }

    pub fn context_params(&self) -> BTreeMap<String, f64> {
        self.env.context_params()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn episode_cap(&self) -> usize {
        self.episode_cap
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TaskHandle {
            seed,
            ..self.clone()
        }
    }

    pub fn spaces(&self) -> Spaces {
        self.env.spaces()
    }

    pub fn start(&self, episode_seed: u64) -> Episode<'_> {
        Episode {
            task: self,
            rng: rng::rng_for(rng::mix(&[self.seed, episode_seed]), Stream::Env, 0),
            state: self.env.initial_state(),
            steps: 0,
            done: false,
        }
    }
}

/// Per-episode rollout context: current state, step counter and the
/// episode's private environment RNG.
pub struct Episode<'a> {
    task: &'a TaskHandle,
    rng: Rng,
    state: Vec<f64>,
    steps: usize,
    done: bool,
}

impl Episode<'_> {
    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &Action) -> Result<TransitionSample> {
        if self.done {
            return Err(Error::domain("episode already finished"));
        }
        let outcome = env_step(self.task, &self.state, action, &mut self.rng)?;
        self.steps += 1;
        let truncated = !outcome.terminal && self.steps >= self.task.episode_cap;
        self.done = outcome.terminal || truncated;
        let sample = TransitionSample {
            state: std::mem::replace(&mut self.state, outcome.next_state.clone()),
            action: action.clone(),
            reward: outcome.reward,
            next_state: outcome.next_state,
            done: self.done,
            truncated,
        };
        Ok(sample)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// Deterministic initial state for `(task, episode_seed)`.
pub fn env_reset(task: &TaskHandle, episode_seed: u64) -> Result<Vec<f64>> {
    task.env.validate()?;
    Ok(task.start(episode_seed).state)
}

/// One transition from `state` under `action`, drawing noise from `rng`.
/// `terminal` covers goal/crash; the step cap is enforced by [`Episode`].
pub fn env_step(
    task: &TaskHandle,
    state: &[f64],
    action: &Action,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    envs::step(&task.env, state, action, rng)
}

/// Where rollout actions come from.
#[derive(Clone, Copy, Debug)]
pub enum Actor<'a> {
    UniformRandom,
    /// Sample from the policy's action distribution.
    Sampled(&'a Policy),
    /// Most likely action (argmax / Gaussian mean).
    Greedy(&'a Policy),
    EpsilonGreedy {
        q: &'a QFunction,
        epsilon: f64,
    },
}

impl Actor<'_> {
    pub fn act(&self, spaces: &Spaces, state: &[f64], rng: &mut Rng) -> Result<Action> {
        match self {
            Actor::UniformRandom => Ok(spaces.action.sample_uniform(rng)),
            Actor::Sampled(p) => p.sample(state, rng),
            Actor::Greedy(p) => p.greedy(state),
            Actor::EpsilonGreedy { q, epsilon } => {
                let n = spaces.action.num_actions().ok_or_else(|| {
                    Error::unsupported("epsilon-greedy needs a discrete action space")
                })?;
                if rng.gen::<f64>() < *epsilon {
                    Ok(Action::Discrete(rng.gen_range(0..n)))
                } else {
                    Ok(Action::Discrete(q.greedy_action(state)?))
                }
            }
        }
    }
}

/// Runs one episode of at most `max_steps` with actions from `actor`.
/// Action sampling uses its own stream so that environment noise is shared
/// by every actor run on the same `(task, episode_seed)`.
pub fn rollout(
    task: &TaskHandle,
    actor: &Actor<'_>,
    max_steps: usize,
    episode_seed: u64,
) -> Result<Trajectory> {
    let spaces = task.spaces();
    rollout_with(task, max_steps, episode_seed, |state, rng| {
        actor.act(&spaces, state, rng)
    })
}

pub fn rollout_with<F>(
    task: &TaskHandle,
    max_steps: usize,
    episode_seed: u64,
    mut choose: F,
) -> Result<Trajectory>
where
    F: FnMut(&[f64], &mut Rng) -> Result<Action>,
{
    let mut actor_rng = rng::rng_for(rng::mix(&[task.seed, episode_seed]), Stream::Actor, 0);
    let mut ep = task.start(episode_seed);
    let mut traj = Trajectory::new();
    while !ep.is_done() && traj.len() < max_steps {
        let action = choose(ep.state(), &mut actor_rng)?;
        traj.push(ep.step(&action)?);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{FrictionCarSpec, GridSlipSpec};

    fn grid(p: f64) -> TaskHandle {
        TaskHandle::new(EnvSpec::GridSlip(GridSlipSpec::new(5, 5, p)), 1, 50).unwrap()
    }

    #[test]
    fn reset_examples() {
        let s = env_reset(&grid(0.2), 9).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s[0], 1.0);
        assert_eq!(s.iter().sum::<f64>(), 1.0);

        let car = TaskHandle::new(EnvSpec::FrictionCar(FrictionCarSpec::new(1.0)), 0, 100).unwrap();
        assert_eq!(env_reset(&car, 3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(env_reset(&car, 3).unwrap(), env_reset(&car, 3).unwrap());
    }

    #[test]
    fn invalid_context_is_named() {
        let mut spec = GridSlipSpec::new(5, 5, 0.2);
        spec.slip_p = 1.5;
        let err = TaskHandle::new(EnvSpec::GridSlip(spec), 0, 10).unwrap_err();
        match err {
            Error::Config { field, .. } => assert_eq!(field, "slip_p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_rollouts_are_reproducible_and_chained() {
        let task = grid(0.3);
        let a = rollout(&task, &Actor::UniformRandom, 40, 5).unwrap();
        let b = rollout(&task, &Actor::UniformRandom, 40, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 40);
        for w in a.samples().windows(2) {
            assert!(!w[0].done);
            assert_eq!(w[0].next_state, w[1].state);
        }
        let total: f64 = a.samples().iter().map(|s| s.reward).sum();
        assert_eq!(total, a.return_undiscounted());
    }

    #[test]
    fn step_cap_truncates() {
        let task = TaskHandle::new(EnvSpec::GridSlip(GridSlipSpec::new(5, 5, 0.0)), 1, 3).unwrap();
        let traj = rollout_with(&task, 100, 0, |_, _| Ok(Action::Discrete(0))).unwrap();
        assert_eq!(traj.len(), 3);
        let last = traj.samples().last().unwrap();
        assert!(last.done && last.truncated && !last.terminal());
    }

    #[test]
    fn returns_to_go() {
        let task = TaskHandle::new(EnvSpec::GridSlip(GridSlipSpec::new(5, 5, 0.0)), 1, 3).unwrap();
        let traj = rollout_with(&task, 100, 0, |_, _| Ok(Action::Discrete(0))).unwrap();
        let g = traj.returns_to_go(0.5);
        assert_eq!(g, vec![-1.0 - 0.5 - 0.25, -1.5, -1.0]);
    }
}
