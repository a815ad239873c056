//! Similarity-weighted adaptation of source knowledge to a target task:
//! policy distillation, value bootstrapping from source critics, and
//! actor-critic distillation with critic guidance. Each adapter has an
//! augmented variant that also optimizes a standard RL loss on the target
//! reward.

pub mod losses;
pub mod replay;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::context::SimilarityWeights;
use crate::error::{Error, Result};
use crate::knowledge::{Knowledge, NetworkPolicy, Policy, QFunction, QTable};
use crate::mdp::{rollout, Action, Actor, Spaces, TaskHandle, TransitionSample};
use crate::nn::{MlpConfig, Optimizer, OptimizerKind};
use crate::par;
use crate::rng::{self, Stream};
use crate::training::{evaluate_knowledge, CurvePoint, EpsilonSchedule, LearningCurve};

pub use losses::{
    actor_critic_loss, carol_plus_loss, critic_guidance_loss, policy_distill_loss, q_next_target,
    td_loss, AdapterKind, StandardRlLoss,
};
pub use replay::ReplayBuffer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// Outer iterations (episodes for the value adapter).
    pub iterations: usize,
    pub lr: f64,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub beta: f64,
    pub gamma: f64,
    pub minibatch_size: usize,
    #[serde(default = "one_usize")]
    pub rollout_episodes_per_iter: usize,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_min_fill")]
    pub replay_min_fill: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: EpsilonSchedule,
    /// Weight `λ` of the standard RL loss in the augmented variant.
    #[serde(default)]
    pub carol_plus_weight: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "one_usize")]
    pub eval_every: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_capacity() -> usize {
    10_000
}

fn default_min_fill() -> usize {
    64
}

fn default_epsilon() -> EpsilonSchedule {
    EpsilonSchedule {
        start: 1.0,
        end: 0.05,
        decay_episodes: 200,
    }
}

fn default_eval_episodes() -> usize {
    10
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta", "must be nonnegative"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        if !(self.carol_plus_weight >= 0.0) {
            return Err(Error::config("carol_plus_weight", "must be nonnegative"));
        }
        for (name, v) in [
            ("minibatch_size", self.minibatch_size),
            ("rollout_episodes_per_iter", self.rollout_episodes_per_iter),
            ("replay_capacity", self.replay_capacity),
            ("replay_min_fill", self.replay_min_fill),
            ("eval_episodes", self.eval_episodes),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.replay_min_fill > self.replay_capacity {
            return Err(Error::config(
                "replay_min_fill",
                "cannot exceed replay_capacity",
            ));
        }
        if self.minibatch_size > self.replay_min_fill {
            return Err(Error::config(
                "minibatch_size",
                "cannot exceed replay_min_fill",
            ));
        }
        self.epsilon.validate()
    }

    fn eval_seed(&self) -> u64 {
        rng::derive(self.seed, Stream::Eval, 0)
    }
}

/// Representation of an adapted Q-function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QModelConfig {
    /// One entry per one-hot state and action, all starting at `init`.
    Tabular {
        #[serde(default)]
        init: f64,
    },
    Network {
        net: MlpConfig,
    },
}

impl QModelConfig {
    pub fn build(&self, spaces: &Spaces, gamma: f64, seed: u64) -> Result<QFunction> {
        match self {
            QModelConfig::Tabular { init } => {
                let mut q = QTable::zeros(spaces.clone(), gamma)?;
                q.values.iter_mut().for_each(|v| *v = *init);
                Ok(QFunction::Tabular(q))
            }
            QModelConfig::Network { net } => {
                crate::knowledge::require_discrete(&spaces.action, "a Q-network target")?;
                Ok(QFunction::Network(crate::knowledge::NetworkQ::new(
                    spaces.clone(),
                    net,
                    seed,
                )?))
            }
        }
    }
}

/// Initial student of every adapter run with this config, shared across
/// methods so that runs differ only in their objective.
pub fn init_student(
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<NetworkPolicy> {
    NetworkPolicy::new(
        target.spaces(),
        student_config,
        rng::derive(cfg.seed, Stream::Init, 0),
    )
}

fn curve_point(
    target: &TaskHandle,
    k: &Knowledge,
    cfg: &AdaptConfig,
    iteration: usize,
    episodes_seen: usize,
) -> Result<CurvePoint> {
    let (mean_return, std_return) =
        evaluate_knowledge(target, k, cfg.eval_episodes, cfg.eval_seed())?;
    Ok(CurvePoint {
        iteration,
        episodes_seen,
        mean_return,
        std_return,
    })
}

fn check_sources(target: &TaskHandle, sources: &[&Spaces], w: &SimilarityWeights) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::domain("need at least one source"));
    }
    if sources.len() != w.len() {
        return Err(Error::domain(format!(
            "{} sources but {} weights",
            sources.len(),
            w.len()
        )));
    }
    let spaces = target.spaces();
    for s in sources {
        s.check_compatible(&spaces)?;
    }
    Ok(())
}

/// Objective of the on-policy actor loop.
struct ActorObjective<'a> {
    teachers: &'a [Policy],
    critics: Option<&'a [QFunction]>,
    w: &'a SimilarityWeights,
    /// Weight of the REINFORCE term; `None` leaves it out entirely.
    reinforce: Option<f64>,
    distill: bool,
}

/// Rollouts under the current student, then one pass of minibatch updates
/// over the fresh transitions, per iteration.
fn run_actor_loop(
    target: &TaskHandle,
    mut student: NetworkPolicy,
    obj: &ActorObjective<'_>,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    cfg.validate()?;
    target.spaces().check_compatible(&student.spaces)?;
    let mut opt = Optimizer::new(cfg.optimizer, student.net.num_params());
    let mut curve = vec![curve_point(
        target,
        &Knowledge::Policy(Policy::Network(student.clone())),
        cfg,
        0,
        0,
    )?];
    let per_iter = cfg.rollout_episodes_per_iter;
    for iter in 0..cfg.iterations {
        let behaviour = Policy::Network(student.clone());
        let trajectories = par::map_range(per_iter, |j| {
            let seed = rng::derive(cfg.seed, Stream::Episode, (iter * per_iter + j) as u64);
            rollout(
                target,
                &Actor::Sampled(&behaviour),
                target.episode_cap(),
                seed,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut samples: Vec<(&TransitionSample, f64)> = Vec::new();
        for t in &trajectories {
            samples.extend(t.samples().iter().zip(t.returns_to_go(cfg.gamma)));
        }
        let baseline = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|(_, g)| g).sum::<f64>() / samples.len() as f64
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::rng_for(cfg.seed, Stream::Split, iter as u64));
        }
        for batch in order.chunks(cfg.minibatch_size) {
            let mut grads = vec![0.0; student.net.num_params()];
            let mut loss = 0.0;
            for &k in batch {
                let (sample, g) = samples[k];
                let s = &sample.state;
                let trace = student.net.forward_trace(s)?;
                let mut up = vec![0.0; trace.output().len()];
                if obj.distill {
                    let (l, u) = losses::distill_output_grad(
                        &student,
                        trace.output(),
                        obj.teachers,
                        obj.w,
                        s,
                        cfg.temperature,
                    )?;
                    loss += l;
                    up = u;
                }
                if let Some(critics) = obj.critics {
                    let (l, u) =
                        losses::critic_output_grad(&student, trace.output(), critics, obj.w, s)?;
                    loss += cfg.beta * l;
                    for (a, b) in up.iter_mut().zip(&u) {
                        *a += cfg.beta * b;
                    }
                }
                if let Some(lambda) = obj.reinforce {
                    let (l, u) = losses::reinforce_output_grad(
                        &student,
                        trace.output(),
                        &sample.action,
                        g - baseline,
                    )?;
                    loss += lambda * l;
                    for (a, b) in up.iter_mut().zip(&u) {
                        *a += lambda * b;
                    }
                }
                student.net.backward_trace(&trace, &up, &mut grads)?;
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    episode: (iter + 1) * per_iter,
                    reason: "non-finite adaptation loss".into(),
                });
            }
            opt.step(student.net.params_mut(), &grads, cfg.lr)?;
        }
        if (iter + 1) % cfg.eval_every == 0 {
            let k = Knowledge::Policy(Policy::Network(student.clone()));
            curve.push(curve_point(
                target,
                &k,
                cfg,
                iter + 1,
                (iter + 1) * per_iter,
            )?);
        }
    }
    Ok((student, curve))
}

fn teacher_spaces(teachers: &[Policy]) -> Vec<&Spaces> {
    teachers.iter().map(|t| t.spaces()).collect()
}

/// Weighted policy distillation on on-policy rollouts of the student.
pub fn carol_policy_adapt(
    teachers: &[Policy],
    w: &SimilarityWeights,
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    check_sources(target, &teacher_spaces(teachers), w)?;
    let student = init_student(target, student_config, cfg)?;
    let obj = ActorObjective {
        teachers,
        critics: None,
        w,
        reinforce: None,
        distill: true,
    };
    run_actor_loop(target, student, &obj, cfg)
}

/// Policy distillation plus `λ` times a REINFORCE loss on target returns.
pub fn carol_plus_policy_adapt(
    teachers: &[Policy],
    w: &SimilarityWeights,
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    check_sources(target, &teacher_spaces(teachers), w)?;
    let student = init_student(target, student_config, cfg)?;
    let obj = ActorObjective {
        teachers,
        critics: None,
        w,
        reinforce: Some(cfg.carol_plus_weight),
        distill: true,
    };
    run_actor_loop(target, student, &obj, cfg)
}

fn check_actor_critic(actors: &[Policy], critics: &[QFunction]) -> Result<()> {
    if actors.len() != critics.len() {
        return Err(Error::domain(format!(
            "{} source actors but {} critics",
            actors.len(),
            critics.len()
        )));
    }
    Ok(())
}

/// Distillation from source actors plus `β` times guidance from the frozen
/// source critics.
pub fn carol_ac_adapt(
    actors: &[Policy],
    critics: &[QFunction],
    w: &SimilarityWeights,
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    check_actor_critic(actors, critics)?;
    check_sources(target, &teacher_spaces(actors), w)?;
    let student = init_student(target, student_config, cfg)?;
    let obj = ActorObjective {
        teachers: actors,
        critics: Some(critics),
        w,
        reinforce: None,
        distill: true,
    };
    run_actor_loop(target, student, &obj, cfg)
}

pub fn carol_plus_ac_adapt(
    actors: &[Policy],
    critics: &[QFunction],
    w: &SimilarityWeights,
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    check_actor_critic(actors, critics)?;
    check_sources(target, &teacher_spaces(actors), w)?;
    let student = init_student(target, student_config, cfg)?;
    let obj = ActorObjective {
        teachers: actors,
        critics: Some(critics),
        w,
        reinforce: Some(cfg.carol_plus_weight),
        distill: true,
    };
    run_actor_loop(target, student, &obj, cfg)
}

/// REINFORCE alone from the shared student initialization.
pub(crate) fn reinforce_train(
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    let student = init_student(target, student_config, cfg)?;
    let obj = ActorObjective {
        teachers: &[],
        critics: None,
        w: &SimilarityWeights::uniform(1)?,
        reinforce: Some(1.0),
        distill: false,
    };
    run_actor_loop(target, student, &obj, cfg)
}

/// Bootstrap target of the value loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ValueObjective {
    /// Frozen weighted source values.
    Sources,
    /// Source target plus `λ` times self-bootstrapped TD.
    SourcesPlus(f64),
    /// Self-bootstrapped TD only.
    SelfTd,
}

pub(crate) fn run_value_loop(
    sources: &[QFunction],
    w: &SimilarityWeights,
    target: &TaskHandle,
    mut qg: QFunction,
    objective: ValueObjective,
    cfg: &AdaptConfig,
) -> Result<(QFunction, LearningCurve)> {
    cfg.validate()?;
    let n_actions =
        crate::knowledge::require_discrete(&target.spaces().action, "value adaptation")?;
    qg.spaces().check_compatible(&target.spaces())?;
    let use_sources = objective != ValueObjective::SelfTd;
    if use_sources {
        check_sources(
            target,
            &sources.iter().map(|q| q.spaces()).collect::<Vec<_>>(),
            w,
        )?;
    }
    let mut replay: ReplayBuffer<(TransitionSample, f64)> = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut opt = Optimizer::new(cfg.optimizer, qg.params().len());
    let mut batch_rng = rng::rng_for(cfg.seed, Stream::Train, 0);
    let mut curve = vec![curve_point(
        target,
        &Knowledge::Value(qg.clone()),
        cfg,
        0,
        0,
    )?];
    for ep in 0..cfg.iterations {
        let eps = cfg.epsilon.at(ep);
        let mut actor_rng = rng::rng_for(cfg.seed, Stream::Actor, ep as u64);
        let mut episode = target.start(rng::derive(cfg.seed, Stream::Episode, ep as u64));
        while !episode.is_done() {
            let a = if actor_rng.gen::<f64>() < eps {
                actor_rng.gen_range(0..n_actions)
            } else {
                qg.greedy_action(episode.state())?
            };
            let sample = episode.step(&Action::Discrete(a))?;
            // Sources and weights are frozen, so the weighted target is
            // computed once per transition.
            let q_next = if use_sources {
                q_next_target(sources, w, &sample.next_state, sample.terminal())?
            } else {
                0.0
            };
            replay.push((sample, q_next));
            if replay.len() < cfg.replay_min_fill {
                continue;
            }
            let batch = replay.sample(cfg.minibatch_size, &mut batch_rng)?;
            let mut grads = vec![0.0; qg.params().len()];
            let mut loss = 0.0;
            for (s, qn) in batch {
                let q = qg.value(&s.state, &s.action)?;
                let mut up = 0.0;
                if use_sources {
                    let diff = q - (s.reward + cfg.gamma * qn);
                    loss += diff * diff;
                    up = 2.0 * diff;
                }
                let self_weight = match objective {
                    ValueObjective::Sources => None,
                    ValueObjective::SourcesPlus(l) => Some(l),
                    ValueObjective::SelfTd => Some(1.0),
                };
                if let Some(lambda) = self_weight {
                    let boot = if s.terminal() {
                        0.0
                    } else {
                        qg.max_value(&s.next_state)?
                    };
                    let diff = q - (s.reward + cfg.gamma * boot);
                    loss += lambda * diff * diff;
                    up += lambda * 2.0 * diff;
                }
                qg.accumulate_grad(&s.state, &s.action, up, &mut grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::Training {
                    episode: ep,
                    reason: "non-finite TD loss".into(),
                });
            }
            opt.step(qg.params_mut(), &grads, cfg.lr)?;
        }
        if (ep + 1) % cfg.eval_every == 0 {
            curve.push(curve_point(
                target,
                &Knowledge::Value(qg.clone()),
                cfg,
                ep + 1,
                ep + 1,
            )?);
        }
    }
    Ok((qg, curve))
}

/// Q-learning toward the weighted greedy values of the source critics.
pub fn carol_value_adapt(
    sources: &[QFunction],
    w: &SimilarityWeights,
    target: &TaskHandle,
    qnet_config: &QModelConfig,
    cfg: &AdaptConfig,
) -> Result<(QFunction, LearningCurve)> {
    let qg = qnet_config.build(
        &target.spaces(),
        cfg.gamma,
        rng::derive(cfg.seed, Stream::Init, 0),
    )?;
    run_value_loop(sources, w, target, qg, ValueObjective::Sources, cfg)
}

pub fn carol_plus_value_adapt(
    sources: &[QFunction],
    w: &SimilarityWeights,
    target: &TaskHandle,
    qnet_config: &QModelConfig,
    cfg: &AdaptConfig,
) -> Result<(QFunction, LearningCurve)> {
    let qg = qnet_config.build(
        &target.spaces(),
        cfg.gamma,
        rng::derive(cfg.seed, Stream::Init, 0),
    )?;
    let objective = if cfg.carol_plus_weight == 0.0 {
        ValueObjective::Sources
    } else {
        ValueObjective::SourcesPlus(cfg.carol_plus_weight)
    };
    run_value_loop(sources, w, target, qg, objective, cfg)
}
