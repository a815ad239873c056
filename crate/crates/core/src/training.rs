//! Source-knowledge trainers, exact tabular solutions and evaluation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::exact_transition_matrix;
use crate::error::{Error, Result};
use crate::knowledge::{
    argmax, one_hot_index, Knowledge, NetworkPolicy, NetworkQ, Policy, PolicyFamily, QFunction,
    QTable,
};
use crate::mdp::{rollout, Action, Actor, TaskHandle, Trajectory, TransitionSample};
use crate::nn::{AdamState, Mlp, MlpConfig};
use crate::par;
use crate::rng::{self, Stream};

/// Linearly decaying exploration rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_episodes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.end && self.end <= self.start && self.start <= 1.0) {
            return Err(Error::config("epsilon", "need 0 <= end <= start <= 1"));
        }
        Ok(())
    }

    pub fn at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1)"));
        }
        self.epsilon.validate()
    }
}

/// One evaluation point of a learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub episodes_seen: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

pub type LearningCurve = Vec<CurvePoint>;

/// Optimal action values from the exact transition matrices, iterated until
/// the sup-norm Bellman residual drops below `tol`.
pub fn value_iteration(task: &TaskHandle, gamma: f64, tol: f64) -> Result<QTable> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config("gamma", "must lie in (0, 1)"));
    }
    let model = exact_transition_matrix(task)?;
    let mut q = QTable::zeros(task.spaces(), gamma)?;
    loop {
        let v: Vec<f64> = (0..model.n_states)
            .map(|s| if model.terminal[s] { 0.0 } else { q.max(s) })
            .collect();
        let mut residual: f64 = 0.0;
        let mut next = q.clone();
        for s in 0..model.n_states {
            if model.terminal[s] {
                continue;
            }
            for a in 0..model.n_actions {
                let row = &model.transitions[a][s];
                let val: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s2, &p)| p * (model.entry_reward[s2] + gamma * v[s2]))
                    .sum();
                residual = residual.max((val - q.get(s, a)).abs());
                next.set(s, a, val);
            }
        }
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
}

/// Tabular ε-greedy Q-learning.
pub fn train_q_tabular(task: &TaskHandle, cfg: &TrainConfig) -> Result<QTable> {
    cfg.validate()?;
    exact_transition_matrix(task)?;
    let mut q = QTable::zeros(task.spaces(), cfg.gamma)?;
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon.at(ep);
        let episode_seed = rng::derive(cfg.seed, Stream::Episode, ep as u64);
        let mut actor_rng = rng::rng_for(cfg.seed, Stream::Train, ep as u64);
        let mut episode = task.start(episode_seed);
        while !episode.is_done() {
            let s = one_hot_index(episode.state())?;
            let a = if actor_rng.gen::<f64>() < eps {
                actor_rng.gen_range(0..q.n_actions)
            } else {
                q.greedy(s)
            };
            let sample = episode.step(&Action::Discrete(a))?;
            let s2 = one_hot_index(&sample.next_state)?;
            let bootstrap = if sample.terminal() { 0.0 } else { q.max(s2) };
            let target = sample.reward + cfg.gamma * bootstrap;
            let old = q.get(s, a);
            q.set(s, a, old + cfg.lr * (target - old));
        }
        if !q.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Training {
                episode: ep,
                reason: "non-finite Q value".into(),
            });
        }
    }
    Ok(q)
}

/// Settings of the actor-critic source trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyGradientConfig {
    pub episodes: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    #[serde(default = "default_episodes_per_update")]
    pub episodes_per_update: usize,
    /// Mean 50-episode return the trained policy should exceed.
    #[serde(default)]
    pub success_threshold: Option<f64>,
    /// Evaluate (10 episodes) after every `eval_every` updates; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
    pub seed: u64,
}

fn default_episodes_per_update() -> usize {
    8
}

#[derive(Clone, Debug)]
pub struct PolicyGradientOutcome {
    pub policy: NetworkPolicy,
    pub critic: NetworkQ,
    /// Mean squared one-step TD residual of the critic on the final batch.
    pub td_residual: f64,
    /// Mean return over 50 evaluation episodes.
    pub eval_mean: f64,
    pub passed: Option<bool>,
    pub curve: LearningCurve,
}

/// Advantage actor-critic: Monte-Carlo returns with a learned state-value
/// baseline drive the policy; a Q critic is fitted alongside by one-step TD
/// on the same transitions.
pub fn train_policy_gradient(
    task: &TaskHandle,
    actor_cfg: &MlpConfig,
    critic_cfg: &MlpConfig,
    cfg: &PolicyGradientConfig,
) -> Result<PolicyGradientOutcome> {
    let spaces = task.spaces();
    let policy = NetworkPolicy::new(
        spaces.clone(),
        actor_cfg,
        rng::derive(cfg.seed, Stream::Init, 1),
    )?;
    let critic = NetworkQ::new(spaces, critic_cfg, rng::derive(cfg.seed, Stream::Init, 2))?;
    run_policy_gradient(task, policy, critic, critic_cfg, cfg)
}

pub fn run_policy_gradient(
    task: &TaskHandle,
    mut policy: NetworkPolicy,
    mut critic: NetworkQ,
    critic_cfg: &MlpConfig,
    cfg: &PolicyGradientConfig,
) -> Result<PolicyGradientOutcome> {
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(Error::config("gamma", "must lie in (0, 1)"));
    }
    if cfg.episodes_per_update == 0 {
        return Err(Error::config("episodes_per_update", "must be positive"));
    }
    task.spaces().check_compatible(&policy.spaces)?;
    let mut baseline = critic_cfg.build(
        task.spaces().state_dim,
        1,
        rng::derive(cfg.seed, Stream::Init, 3),
    )?;
    let mut actor_opt = AdamState::for_mlp(&policy.net);
    let mut critic_opt = AdamState::for_mlp(&critic.net);
    let mut baseline_opt = AdamState::for_mlp(&baseline);
    let eval_seed = rng::derive(cfg.seed, Stream::Eval, 0);
    let mut curve = Vec::new();
    let mut td_residual = 0.0;

    let n_updates = cfg.episodes.div_ceil(cfg.episodes_per_update);
    let mut episodes_seen = 0;
    if cfg.eval_every > 0 {
        let (m, s) = evaluate_policy(task, &policy, 10, eval_seed)?;
        curve.push(CurvePoint {
            iteration: 0,
            episodes_seen: 0,
            mean_return: m,
            std_return: s,
        });
    }
    for update in 0..n_updates {
        let batch = (cfg.episodes - episodes_seen).min(cfg.episodes_per_update);
        let pol = Policy::Network(policy.clone());
        let trajectories = par::map_range(batch, |i| {
            let seed = rng::derive(cfg.seed, Stream::Episode, (episodes_seen + i) as u64);
            rollout(task, &Actor::Sampled(&pol), task.episode_cap(), seed)
        })
        .into_iter()
        .collect::<Result<Vec<Trajectory>>>()?;
        episodes_seen += batch;

        let mut samples: Vec<(&TransitionSample, f64)> = Vec::new();
        for traj in &trajectories {
            for (s, g) in traj.samples().iter().zip(traj.returns_to_go(cfg.gamma)) {
                samples.push((s, g));
            }
        }
        let n = samples.len() as f64;

        // Baseline and advantages.
        let values = samples
            .iter()
            .map(|(s, _)| Ok(baseline.forward(&s.state)?[0]))
            .collect::<Result<Vec<f64>>>()?;
        let adv: Vec<f64> = samples
            .iter()
            .zip(&values)
            .map(|((_, g), v)| g - v)
            .collect();
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(1e-8);

        let mut actor_grad = vec![0.0; policy.net.num_params()];
        let mut base_grad = vec![0.0; baseline.num_params()];
        let mut critic_grad = vec![0.0; critic.net.num_params()];
        let mut loss = 0.0;
        let mut residual_sum = 0.0;
        for (k, (sample, g)) in samples.iter().enumerate() {
            let trace = policy.net.forward_trace(&sample.state)?;
            let (logp, dlogp) = policy.log_prob_output_grad(trace.output(), &sample.action)?;
            let a = (adv[k] - mean) / std;
            loss -= a * logp / n;
            let upstream: Vec<f64> = dlogp.iter().map(|d| -a * d / n).collect();
            policy
                .net
                .backward_trace(&trace, &upstream, &mut actor_grad)?;

            let b_trace = baseline.forward_trace(&sample.state)?;
            let diff = b_trace.output()[0] - g;
            baseline.backward_trace(&b_trace, &[2.0 * diff / n], &mut base_grad)?;

            let next_value = if sample.terminal() {
                0.0
            } else {
                policy_value(&critic, &policy, &sample.next_state)?
            };
            let target = sample.reward + cfg.gamma * next_value;
            let x = critic
                .spaces
                .encode_state_action(&sample.state, &sample.action)?;
            let c_trace = critic.net.forward_trace(&x)?;
            let td = c_trace.output()[0] - target;
            residual_sum += td * td;
            critic
                .net
                .backward_trace(&c_trace, &[2.0 * td / n], &mut critic_grad)?;
        }
        td_residual = residual_sum / n;
        if !loss.is_finite() || !td_residual.is_finite() {
            return Err(Error::Training {
                episode: episodes_seen,
                reason: "non-finite actor or critic loss".into(),
            });
        }
        actor_opt.update(policy.net.params_mut(), &actor_grad, cfg.actor_lr)?;
        baseline_opt.update(baseline.params_mut(), &base_grad, cfg.critic_lr)?;
        critic_opt.update(critic.net.params_mut(), &critic_grad, cfg.critic_lr)?;

        if cfg.eval_every > 0 && (update + 1) % cfg.eval_every == 0 {
            let (m, s) = evaluate_policy(task, &policy, 10, eval_seed)?;
            curve.push(CurvePoint {
                iteration: update + 1,
                episodes_seen,
                mean_return: m,
                std_return: s,
            });
        }
    }
    let (eval_mean, _) = evaluate_policy(task, &policy, 50, eval_seed)?;
    Ok(PolicyGradientOutcome {
        passed: cfg.success_threshold.map(|t| eval_mean > t),
        policy,
        critic,
        td_residual,
        eval_mean,
        curve,
    })
}

/// `Q(s, π(s))`: the mean action for Gaussian policies, the
/// policy-weighted average over actions for softmax policies.
fn policy_value(critic: &NetworkQ, policy: &NetworkPolicy, state: &[f64]) -> Result<f64> {
    match policy.family {
        PolicyFamily::DiagonalGaussian => {
            let Action::Continuous(mean) = policy.greedy(state)? else {
                unreachable!("gaussian policies act continuously")
            };
            critic.value_encoded(state, &mean)
        }
        PolicyFamily::SoftmaxDiscrete => {
            let crate::knowledge::ActionDistribution::Logits(l) = policy.distribution(state)?
            else {
                unreachable!("softmax policies emit logits")
            };
            let p = crate::nn::softmax(&l, 1.0)?;
            let q = QFunction::Network(critic.clone());
            let vals = q.values(state)?;
            Ok(p.iter().zip(&vals).map(|(a, b)| a * b).sum())
        }
    }
}

fn mean_std(returns: &[f64]) -> (f64, f64) {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn evaluate_policy(
    task: &TaskHandle,
    policy: &NetworkPolicy,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    evaluate_knowledge(
        task,
        &Knowledge::Policy(Policy::Network(policy.clone())),
        n,
        seed,
    )
}

/// Sample mean and standard deviation of undiscounted returns over
/// `n_episodes` deterministic-action rollouts (argmax / Gaussian mean /
/// greedy in Q).
pub fn evaluate_knowledge(
    task: &TaskHandle,
    knowledge: &Knowledge,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    knowledge.check_task(task)?;
    if n_episodes == 0 {
        return Err(Error::config("n_episodes", "must be positive"));
    }
    let actor = match knowledge {
        Knowledge::Policy(p) | Knowledge::ActorCritic { actor: p, .. } => Actor::Greedy(p),
        Knowledge::Value(q) => Actor::EpsilonGreedy { q, epsilon: 0.0 },
    };
    let returns = par::map_range(n_episodes, |i| {
        let ep_seed = rng::derive(seed, Stream::Eval, i as u64);
        rollout(task, &actor, task.episode_cap(), ep_seed).map(|t| t.return_undiscounted())
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&returns))
}

/// Greedy policy of a tabular Q as knowledge.
pub fn greedy_knowledge(q: &QTable) -> Knowledge {
    Knowledge::Policy(Policy::Tabular(q.greedy_policy()))
}

/// Exact expected undiscounted return of a deterministic tabular policy
/// within the task's step cap (finite-horizon policy evaluation).
pub fn expected_return_tabular(task: &TaskHandle, actions: &[usize]) -> Result<f64> {
    let model = exact_transition_matrix(task)?;
    if actions.len() != model.n_states || actions.iter().any(|&a| a >= model.n_actions) {
        return Err(Error::domain("action table does not fit the task"));
    }
    let mut v = vec![0.0; model.n_states];
    for _ in 0..task.episode_cap() {
        let next: Vec<f64> = (0..model.n_states)
            .map(|s| {
                if model.terminal[s] {
                    return 0.0;
                }
                model.transitions[actions[s]][s]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s2, &p)| p * (model.entry_reward[s2] + v[s2]))
                    .sum()
            })
            .collect();
        v = next;
    }
    Ok(v[model.start])
}

/// Action `knowledge` takes under deterministic evaluation in every state
/// of a tabular task.
pub fn greedy_table(task: &TaskHandle, knowledge: &Knowledge) -> Result<Vec<usize>> {
    knowledge.check_task(task)?;
    let n = exact_transition_matrix(task)?.n_states;
    (0..n)
        .map(|s| {
            let mut x = vec![0.0; n];
            x[s] = 1.0;
            match knowledge {
                Knowledge::Policy(p) | Knowledge::ActorCritic { actor: p, .. } => {
                    match p.greedy(&x)? {
                        Action::Discrete(a) => Ok(a),
                        Action::Continuous(_) => {
                            Err(Error::unsupported("continuous action on a tabular task"))
                        }
                    }
                }
                Knowledge::Value(q) => q.greedy_action(&x),
            }
        })
        .collect()
}

/// Exact counterpart of `evaluate_knowledge` on tabular tasks.
pub fn exact_greedy_return(task: &TaskHandle, knowledge: &Knowledge) -> Result<f64> {
    expected_return_tabular(task, &greedy_table(task, knowledge)?)
}

/// Greedy action of every row of `q`, lowest index on ties.
pub fn greedy_actions(q: &QTable) -> Vec<usize> {
    (0..q.n_states).map(|s| argmax(q.row(s))).collect()
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Mlp>();
    check::<Knowledge>();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_gridslip, GridSlipSpec};
    use crate::mdp::ActionSpec;
    use crate::mdp::Spaces;

    #[test]
    fn epsilon_schedule_is_linear() {
        let e = EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            decay_episodes: 10,
        };
        assert_eq!(e.at(0), 1.0);
        assert!((e.at(5) - 0.55).abs() < 1e-12);
        assert_eq!(e.at(10), 0.1);
        assert_eq!(e.at(100), 0.1);
        assert!(EpsilonSchedule {
            start: 0.1,
            end: 0.5,
            decay_episodes: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn two_cell_chain() {
        // Entering the goal costs the step reward and pays the goal reward.
        let task = make_gridslip(GridSlipSpec::new(2, 1, 0.0), 0, 10).unwrap();
        let q = value_iteration(&task, 0.9, 1e-12).unwrap();
        assert!((q.get(0, 1) - 19.0).abs() < 1e-9);
        // Bumping into the wall: -1 then the optimal 19 one step later.
        assert!((q.get(0, 3) - (-1.0 + 0.9 * 19.0)).abs() < 1e-9);
    }

    #[test]
    fn value_iteration_rejects_continuous_tasks() {
        let task =
            crate::envs::make_frictioncar(crate::envs::FrictionCarSpec::new(1.0), 0, 10).unwrap();
        assert!(matches!(
            value_iteration(&task, 0.9, 1e-6),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn evaluate_single_episode_has_zero_std() {
        let task = make_gridslip(GridSlipSpec::new(3, 3, 0.3), 0, 30).unwrap();
        let q = value_iteration(&task, 0.95, 1e-9).unwrap();
        let (_, std) =
            evaluate_knowledge(&task, &Knowledge::Value(QFunction::Tabular(q)), 1, 5).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn evaluate_rejects_mismatched_knowledge() {
        let task = make_gridslip(GridSlipSpec::new(3, 3, 0.3), 0, 30).unwrap();
        let other = Spaces {
            state_dim: 16,
            action: ActionSpec::Discrete(4),
        };
        let q = QTable::zeros(other, 0.9).unwrap();
        assert!(matches!(
            evaluate_knowledge(&task, &Knowledge::Value(QFunction::Tabular(q)), 3, 0),
            Err(Error::Domain(_))
        ));
    }
}
