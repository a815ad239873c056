//! Source and target knowledge: policies, action-value functions and
//! actor-critic pairs, each tagged with the spaces it was trained against.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, ActionSpec, Spaces, TaskHandle};
use crate::nn::{dist, Mlp, MlpConfig};
use crate::rng::Rng;

/// Probability a tabular teacher puts on its own action when lifted to a
/// softmax distribution.
pub const TABULAR_TEACHER_CONFIDENCE: f64 = 1.0 - 1e-3;

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the single `1.0` in a one-hot vector.
pub fn one_hot_index(state: &[f64]) -> Result<usize> {
    let mut found = None;
    for (i, &v) in state.iter().enumerate() {
        if v == 1.0 && found.is_none() {
            found = Some(i);
        } else if v != 0.0 {
            return Err(Error::domain("tabular knowledge needs one-hot states"));
        }
    }
    found.ok_or_else(|| Error::domain("tabular knowledge needs one-hot states"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    SoftmaxDiscrete,
    DiagonalGaussian,
}

impl PolicyFamily {
    pub fn for_spaces(spaces: &Spaces) -> Self {
        if spaces.action.is_discrete() {
            PolicyFamily::SoftmaxDiscrete
        } else {
            PolicyFamily::DiagonalGaussian
        }
    }
}

/// What a policy says about one state, in a form the divergences consume.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Logits(Vec<f64>),
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub actions: Vec<usize>,
    pub spaces: Spaces,
}

impl TabularPolicy {
    pub fn action(&self, state: &[f64]) -> Result<usize> {
        let s = one_hot_index(state)?;
        self.actions
            .get(s)
            .copied()
            .ok_or_else(|| Error::domain(format!("state index {s} outside the policy table")))
    }

    /// Near-one-hot logits with `TABULAR_TEACHER_CONFIDENCE` on the table action.
    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let a = self.action(state)?;
        let n = self.actions_len();
        let rest = ((1.0 - TABULAR_TEACHER_CONFIDENCE) / (n as f64 - 1.0)).ln();
        Ok((0..n)
            .map(|i| {
                if i == a {
                    TABULAR_TEACHER_CONFIDENCE.ln()
                } else {
                    rest
                }
            })
            .collect())
    }

    fn actions_len(&self) -> usize {
        self.spaces.action.num_actions().unwrap_or(1)
    }
}

/// Policy network. Softmax policies emit one logit per action; Gaussian
/// policies emit the mean followed by the log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkPolicy {
    pub net: Mlp,
    pub family: PolicyFamily,
    pub spaces: Spaces,
}

impl NetworkPolicy {
    pub fn new(spaces: Spaces, config: &MlpConfig, seed: u64) -> Result<Self> {
        let family = PolicyFamily::for_spaces(&spaces);
        let out = match family {
            PolicyFamily::SoftmaxDiscrete => spaces.action.encoded_dim(),
            PolicyFamily::DiagonalGaussian => 2 * spaces.action.encoded_dim(),
        };
        let net = config.build(spaces.state_dim, out, seed)?;
        Ok(NetworkPolicy {
            net,
            family,
            spaces,
        })
    }

    pub fn from_net(net: Mlp, family: PolicyFamily, spaces: Spaces) -> Result<Self> {
        let d = spaces.action.encoded_dim();
        let want = match family {
            PolicyFamily::SoftmaxDiscrete => d,
            PolicyFamily::DiagonalGaussian => 2 * d,
        };
        if net.input_dim() != spaces.state_dim || net.output_dim() != want {
            return Err(Error::domain(
                "policy network shape does not match its spaces",
            ));
        }
        if family == PolicyFamily::SoftmaxDiscrete && !spaces.action.is_discrete() {
            return Err(Error::domain("softmax policy on a continuous action space"));
        }
        Ok(NetworkPolicy {
            net,
            family,
            spaces,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.spaces.action.encoded_dim()
    }

    pub fn distribution(&self, state: &[f64]) -> Result<ActionDistribution> {
        let out = self.net.forward(state)?;
        Ok(self.split_outputs(out))
    }

    pub(crate) fn split_outputs(&self, out: Vec<f64>) -> ActionDistribution {
        match self.family {
            PolicyFamily::SoftmaxDiscrete => ActionDistribution::Logits(out),
            PolicyFamily::DiagonalGaussian => {
                let d = self.action_dim();
                ActionDistribution::Gaussian {
                    mean: out[..d].to_vec(),
                    log_std: out[d..].to_vec(),
                }
            }
        }
    }

    pub fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<Action> {
        match self.distribution(state)? {
            ActionDistribution::Logits(l) => {
                let p = dist::softmax(&l, 1.0)?;
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return Ok(Action::Discrete(i));
                    }
                }
                Ok(Action::Discrete(p.len() - 1))
            }
            ActionDistribution::Gaussian { mean, log_std } => Ok(Action::Continuous(
                mean.iter()
                    .zip(&log_std)
                    .map(|(&m, &ls)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * z
                    })
                    .collect(),
            )),
        }
    }

    pub fn greedy(&self, state: &[f64]) -> Result<Action> {
        match self.distribution(state)? {
            ActionDistribution::Logits(l) => Ok(Action::Discrete(argmax(&l))),
            ActionDistribution::Gaussian { mean, .. } => Ok(Action::Continuous(mean)),
        }
    }

    /// `log π(action | state)` and its gradient with respect to the network
    /// outputs (to be fed to `Mlp::backward_trace`).
    pub fn log_prob_output_grad(
        &self,
        outputs: &[f64],
        action: &Action,
    ) -> Result<(f64, Vec<f64>)> {
        match (self.family, action) {
            (PolicyFamily::SoftmaxDiscrete, Action::Discrete(a)) => {
                let log_p = dist::log_softmax(outputs);
                let grad = log_p
                    .iter()
                    .enumerate()
                    .map(|(i, &lp)| if i == *a { 1.0 } else { 0.0 } - lp.exp())
                    .collect();
                Ok((log_p[*a], grad))
            }
            (PolicyFamily::DiagonalGaussian, Action::Continuous(x)) => {
                // Same clamp as `sample`; clamped dimensions get no log-std gradient.
                let d = self.action_dim();
                let log_std: Vec<f64> = outputs[d..]
                    .iter()
                    .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
                    .collect();
                let (lp, dm, dls) = dist::gaussian_log_prob_with_grad(
                    dist::DiagGaussian {
                        mean: &outputs[..d],
                        log_std: &log_std,
                    },
                    x,
                );
                let mut grad = dm;
                grad.extend(dls.iter().zip(&outputs[d..]).map(|(g, l)| {
                    if (LOG_STD_MIN..=LOG_STD_MAX).contains(l) {
                        *g
                    } else {
                        0.0
                    }
                }));
                Ok((lp, grad))
            }
            _ => Err(Error::domain(
                "action kind does not match the policy family",
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Tabular(TabularPolicy),
    Network(NetworkPolicy),
}

impl Policy {
    pub fn spaces(&self) -> &Spaces {
        match self {
            Policy::Tabular(p) => &p.spaces,
            Policy::Network(p) => &p.spaces,
        }
    }

    pub fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<Action> {
        match self {
            Policy::Tabular(p) => Ok(Action::Discrete(p.action(state)?)),
            Policy::Network(p) => p.sample(state, rng),
        }
    }

    pub fn greedy(&self, state: &[f64]) -> Result<Action> {
        match self {
            Policy::Tabular(p) => Ok(Action::Discrete(p.action(state)?)),
            Policy::Network(p) => p.greedy(state),
        }
    }

    /// Teacher view for distillation. Tabular policies are lifted to a
    /// near-one-hot softmax distribution.
    pub fn teacher_distribution(&self, state: &[f64]) -> Result<ActionDistribution> {
        match self {
            Policy::Tabular(p) => Ok(ActionDistribution::Logits(p.logits(state)?)),
            Policy::Network(p) => p.distribution(state),
        }
    }

    pub fn family(&self) -> PolicyFamily {
        match self {
            Policy::Tabular(_) => PolicyFamily::SoftmaxDiscrete,
            Policy::Network(p) => p.family,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `|S| × |A|`.
    pub values: Vec<f64>,
    pub gamma: f64,
    pub spaces: Spaces,
}

impl QTable {
    pub fn zeros(spaces: Spaces, gamma: f64) -> Result<Self> {
        let n_actions = spaces
            .action
            .num_actions()
            .ok_or_else(|| Error::unsupported("Q tables need a discrete action space"))?;
        let n_states = spaces.state_dim;
        Ok(QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            gamma,
            spaces,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn greedy_policy(&self) -> TabularPolicy {
        TabularPolicy {
            actions: (0..self.n_states).map(|s| self.greedy(s)).collect(),
            spaces: self.spaces.clone(),
        }
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Action-value network over `state ⊕ encoded action`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkQ {
    pub net: Mlp,
    pub spaces: Spaces,
}

impl NetworkQ {
    pub fn new(spaces: Spaces, config: &MlpConfig, seed: u64) -> Result<Self> {
        let net = config.build(spaces.state_dim + spaces.action.encoded_dim(), 1, seed)?;
        Ok(NetworkQ { net, spaces })
    }

    pub fn from_net(net: Mlp, spaces: Spaces) -> Result<Self> {
        if net.input_dim() != spaces.state_dim + spaces.action.encoded_dim()
            || net.output_dim() != 1
        {
            return Err(Error::domain("Q network shape does not match its spaces"));
        }
        Ok(NetworkQ { net, spaces })
    }

    pub fn value_encoded(&self, state: &[f64], action_enc: &[f64]) -> Result<f64> {
        let mut x = state.to_vec();
        x.extend_from_slice(action_enc);
        Ok(self.net.forward(&x)?[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QFunction {
    Tabular(QTable),
    Network(NetworkQ),
}

impl QFunction {
    pub fn spaces(&self) -> &Spaces {
        match self {
            QFunction::Tabular(q) => &q.spaces,
            QFunction::Network(q) => &q.spaces,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            QFunction::Tabular(q) => &q.values,
            QFunction::Network(q) => q.net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            QFunction::Tabular(q) => &mut q.values,
            QFunction::Network(q) => q.net.params_mut(),
        }
    }

    pub fn num_actions(&self) -> Result<usize> {
        self.spaces()
            .action
            .num_actions()
            .ok_or_else(|| Error::unsupported("action enumeration needs a discrete action space"))
    }

    pub fn value(&self, state: &[f64], action: &Action) -> Result<f64> {
        match self {
            QFunction::Tabular(q) => {
                let a = action
                    .index()
                    .filter(|&a| a < q.n_actions)
                    .ok_or_else(|| Error::domain("invalid tabular action"))?;
                Ok(q.get(one_hot_index(state)?, a))
            }
            QFunction::Network(q) => q.value_encoded(state, &q.spaces.action.encode(action)?),
        }
    }

    /// `Q(state, a)` for every discrete action.
    pub fn values(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            QFunction::Tabular(q) => Ok(q.row(one_hot_index(state)?).to_vec()),
            QFunction::Network(_) => {
                let n = self.num_actions()?;
                (0..n)
                    .map(|a| self.value(state, &Action::Discrete(a)))
                    .collect()
            }
        }
    }

    pub fn greedy_action(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.values(state)?))
    }

    pub fn max_value(&self, state: &[f64]) -> Result<f64> {
        let v = self.values(state)?;
        Ok(v[argmax(&v)])
    }

    /// Adds `upstream · ∂Q(state, action)/∂params` into `grads` and returns
    /// `Q(state, action)`.
    pub fn accumulate_grad(
        &self,
        state: &[f64],
        action: &Action,
        upstream: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        match self {
            QFunction::Tabular(q) => {
                let s = one_hot_index(state)?;
                let a = action
                    .index()
                    .filter(|&a| a < q.n_actions)
                    .ok_or_else(|| Error::domain("invalid tabular action"))?;
                grads[s * q.n_actions + a] += upstream;
                Ok(q.get(s, a))
            }
            QFunction::Network(q) => {
                let x = q.spaces.encode_state_action(state, action)?;
                let trace = q.net.forward_trace(&x)?;
                q.net.backward_trace(&trace, &[upstream], grads)?;
                Ok(trace.output()[0])
            }
        }
    }

    pub fn greedy_policy(&self, states: usize) -> Result<TabularPolicy> {
        match self {
            QFunction::Tabular(q) => Ok(q.greedy_policy()),
            QFunction::Network(q) => {
                let mut actions = Vec::with_capacity(states);
                for s in 0..states {
                    let mut v = vec![0.0; states];
                    v[s] = 1.0;
                    actions.push(self.greedy_action(&v)?);
                }
                Ok(TabularPolicy {
                    actions,
                    spaces: q.spaces.clone(),
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Knowledge {
    Policy(Policy),
    Value(QFunction),
    ActorCritic { actor: Policy, critic: QFunction },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Policy,
    Value,
    ActorCritic,
}

impl Knowledge {
    pub fn kind(&self) -> KnowledgeKind {
        match self {
            Knowledge::Policy(_) => KnowledgeKind::Policy,
            Knowledge::Value(_) => KnowledgeKind::Value,
            Knowledge::ActorCritic { .. } => KnowledgeKind::ActorCritic,
        }
    }

    pub fn spaces(&self) -> &Spaces {
        match self {
            Knowledge::Policy(p) => p.spaces(),
            Knowledge::Value(q) => q.spaces(),
            Knowledge::ActorCritic { actor, .. } => actor.spaces(),
        }
    }

    pub fn check_task(&self, task: &TaskHandle) -> Result<()> {
        self.spaces().check_compatible(&task.spaces())?;
        if let Knowledge::ActorCritic { critic, .. } = self {
            critic.spaces().check_compatible(&task.spaces())?;
        }
        Ok(())
    }

    /// The policy part, if any.
    pub fn policy(&self) -> Option<&Policy> {
        match self {
            Knowledge::Policy(p) | Knowledge::ActorCritic { actor: p, .. } => Some(p),
            Knowledge::Value(_) => None,
        }
    }

    pub fn q_function(&self) -> Option<&QFunction> {
        match self {
            Knowledge::Value(q) | Knowledge::ActorCritic { critic: q, .. } => Some(q),
            Knowledge::Policy(_) => None,
        }
    }
}

/// Whether an action spec admits argmax enumeration.
pub fn require_discrete(spec: &ActionSpec, what: &str) -> Result<usize> {
    spec.num_actions()
        .ok_or_else(|| Error::unsupported(format!("{what} requires a discrete action space")))
}
