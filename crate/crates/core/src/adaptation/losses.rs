//! The adaptation objectives and their exact parameter gradients.

use crate::context::SimilarityWeights;
use crate::error::{Error, Result};
use crate::knowledge::{
    argmax, ActionDistribution, NetworkPolicy, Policy, PolicyFamily, QFunction,
};
use crate::mdp::{Action, TransitionSample};
use crate::nn::dist::{kl_gaussian_with_grad, kl_softmax_with_grad, DiagGaussian};
use crate::nn::{softmax, Trace};

fn check_weights(n: usize, w: &SimilarityWeights) -> Result<()> {
    if n != w.len() {
        return Err(Error::domain(format!(
            "{n} sources but {} weights",
            w.len()
        )));
    }
    if n == 0 {
        return Err(Error::domain("need at least one source"));
    }
    Ok(())
}

/// Teacher distribution in the student's family.
fn teacher_target(
    teacher: &Policy,
    student: &NetworkPolicy,
    state: &[f64],
) -> Result<ActionDistribution> {
    if teacher.family() != student.family {
        return Err(Error::domain("teacher and student policy families differ"));
    }
    teacher.spaces().check_compatible(&student.spaces)?;
    teacher.teacher_distribution(state)
}

/// `Σ_i w_i KL(teacher_i ‖ student)` at one state and its gradient with
/// respect to the student's network outputs.
pub(crate) fn distill_output_grad(
    student: &NetworkPolicy,
    outputs: &[f64],
    teachers: &[Policy],
    w: &SimilarityWeights,
    state: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut up = vec![0.0; outputs.len()];
    for (teacher, &wi) in teachers.iter().zip(&w.weights) {
        match teacher_target(teacher, student, state)? {
            ActionDistribution::Logits(t) => {
                let (kl, g) = kl_softmax_with_grad(&t, outputs, temperature)?;
                loss += wi * kl;
                for (u, gk) in up.iter_mut().zip(&g) {
                    *u += wi * gk;
                }
            }
            ActionDistribution::Gaussian { mean, log_std } => {
                let d = student.action_dim();
                let (kl, dm, dls) = kl_gaussian_with_grad(
                    DiagGaussian {
                        mean: &mean,
                        log_std: &log_std,
                    },
                    DiagGaussian {
                        mean: &outputs[..d],
                        log_std: &outputs[d..],
                    },
                )?;
                loss += wi * kl;
                for (u, gk) in up.iter_mut().zip(dm.iter().chain(&dls)) {
                    *u += wi * gk;
                }
            }
        }
    }
    Ok((loss, up))
}

/// Weighted distillation loss summed over `states`, with exact gradients
/// with respect to the student parameters. The temperature applies to the
/// teacher logits; Gaussian teachers ignore it.
pub fn policy_distill_loss(
    student: &NetworkPolicy,
    teachers: &[Policy],
    w: &SimilarityWeights,
    states: &[Vec<f64>],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    check_weights(teachers.len(), w)?;
    let mut grads = vec![0.0; student.net.num_params()];
    let mut loss = 0.0;
    for s in states {
        let trace = student.net.forward_trace(s)?;
        let (l, up) = distill_output_grad(student, trace.output(), teachers, w, s, temperature)?;
        loss += l;
        student.net.backward_trace(&trace, &up, &mut grads)?;
    }
    Ok((loss, grads))
}

/// `Σ_i w_i max_a Q_i(s⁺, a)`, ties to the lowest action index; zero when
/// `s⁺` is terminal.
pub fn q_next_target(
    sources: &[QFunction],
    w: &SimilarityWeights,
    s_plus: &[f64],
    terminal: bool,
) -> Result<f64> {
    check_weights(sources.len(), w)?;
    if terminal {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (q, wi) in sources.iter().zip(&w.weights) {
        if !q.spaces().action.is_discrete() {
            return Err(Error::unsupported(
                "the weighted bootstrap target needs a discrete action space",
            ));
        }
        let v = q.values(s_plus)?;
        total += wi * v[argmax(&v)];
    }
    Ok(total)
}

/// `Σ_B (Q_g(s, a) − r − γ·q_next)²` against frozen targets, with exact
/// gradients with respect to the parameters of `qg`.
pub fn td_loss(
    qg: &QFunction,
    batch: &[TransitionSample],
    q_next: &[f64],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.len() != q_next.len() {
        return Err(Error::domain(format!(
            "{} transitions but {} targets",
            batch.len(),
            q_next.len()
        )));
    }
    let mut grads = vec![0.0; qg.params().len()];
    let mut loss = 0.0;
    for (s, qn) in batch.iter().zip(q_next) {
        let target = s.reward + gamma * qn;
        let q = qg.value(&s.state, &s.action)?;
        let diff = q - target;
        loss += diff * diff;
        qg.accumulate_grad(&s.state, &s.action, 2.0 * diff, &mut grads)?;
    }
    Ok((loss, grads))
}

/// The action a critic sees from the actor's outputs: the Gaussian mean,
/// or the action probabilities in place of the one-hot code.
fn critic_action(actor: &NetworkPolicy, outputs: &[f64]) -> Result<Vec<f64>> {
    match actor.family {
        PolicyFamily::DiagonalGaussian => Ok(outputs[..actor.action_dim()].to_vec()),
        PolicyFamily::SoftmaxDiscrete => softmax(outputs, 1.0),
    }
}

/// `−Σ_i w_i Q_i(s, π(s))` at one state and its gradient with respect to
/// the actor outputs. Critics are read-only.
pub(crate) fn critic_output_grad(
    actor: &NetworkPolicy,
    outputs: &[f64],
    critics: &[QFunction],
    w: &SimilarityWeights,
    state: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let action = critic_action(actor, outputs)?;
    let mut x = state.to_vec();
    x.extend_from_slice(&action);
    let mut loss = 0.0;
    let mut d_action = vec![0.0; action.len()];
    for (critic, &wi) in critics.iter().zip(&w.weights) {
        let QFunction::Network(q) = critic else {
            return Err(Error::unsupported(
                "critic guidance needs differentiable critics",
            ));
        };
        q.spaces.check_compatible(&actor.spaces)?;
        let trace: Trace = q.net.forward_trace(&x)?;
        loss -= wi * trace.output()[0];
        let mut scratch = vec![0.0; q.net.num_params()];
        let dx = q.net.backward_trace(&trace, &[-wi], &mut scratch)?;
        for (d, g) in d_action.iter_mut().zip(&dx[state.len()..]) {
            *d += g;
        }
    }
    let mut up = vec![0.0; outputs.len()];
    match actor.family {
        PolicyFamily::DiagonalGaussian => up[..d_action.len()].copy_from_slice(&d_action),
        PolicyFamily::SoftmaxDiscrete => {
            let dot: f64 = action.iter().zip(&d_action).map(|(p, g)| p * g).sum();
            for (k, u) in up.iter_mut().enumerate() {
                *u = action[k] * (d_action[k] - dot);
            }
        }
    }
    Ok((loss, up))
}

/// Critic guidance loss summed over `states` and its actor gradient.
pub fn critic_guidance_loss(
    actor: &NetworkPolicy,
    critics: &[QFunction],
    w: &SimilarityWeights,
    states: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    check_weights(critics.len(), w)?;
    let mut grads = vec![0.0; actor.net.num_params()];
    let mut loss = 0.0;
    for s in states {
        let trace = actor.net.forward_trace(s)?;
        let (l, up) = critic_output_grad(actor, trace.output(), critics, w, s)?;
        loss += l;
        actor.net.backward_trace(&trace, &up, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Distillation plus `β` times critic guidance, evaluated in one pass.
pub fn actor_critic_loss(
    actor: &NetworkPolicy,
    teachers: &[Policy],
    critics: &[QFunction],
    w: &SimilarityWeights,
    states: &[Vec<f64>],
    temperature: f64,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_weights(teachers.len(), w)?;
    check_weights(critics.len(), w)?;
    let mut grads = vec![0.0; actor.net.num_params()];
    let mut loss = 0.0;
    for s in states {
        let trace = actor.net.forward_trace(s)?;
        let (lp, mut up) = distill_output_grad(actor, trace.output(), teachers, w, s, temperature)?;
        let (lc, upc) = critic_output_grad(actor, trace.output(), critics, w, s)?;
        loss += lp + beta * lc;
        for (u, c) in up.iter_mut().zip(&upc) {
            *u += beta * c;
        }
        actor.net.backward_trace(&trace, &up, &mut grads)?;
    }
    Ok((loss, grads))
}

/// REINFORCE surrogate `−Σ (G − b) ln π(a|s)` for one sample and its
/// gradient with respect to the policy outputs.
pub(crate) fn reinforce_output_grad(
    policy: &NetworkPolicy,
    outputs: &[f64],
    action: &Action,
    advantage: f64,
) -> Result<(f64, Vec<f64>)> {
    let (logp, dlogp) = policy.log_prob_output_grad(outputs, action)?;
    Ok((
        -advantage * logp,
        dlogp.iter().map(|d| -advantage * d).collect(),
    ))
}

/// Which adapter an objective belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterKind {
    Policy,
    Value,
    ActorCritic,
}

/// The environment-reward loss added by the augmented variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StandardRlLoss {
    /// Policy-gradient surrogate, for the policy and actor-critic adapters.
    PolicyGradient(f64),
    /// Self-bootstrapped TD loss, for the value adapter.
    SelfTd(f64),
}

/// `carol_loss + λ · standard_loss`; `λ = 0` returns `carol_loss` unchanged.
pub fn carol_plus_loss(
    kind: AdapterKind,
    carol_loss: f64,
    standard: StandardRlLoss,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::config("carol_plus_weight", "must be nonnegative"));
    }
    let extra = match (kind, standard) {
        (AdapterKind::Policy | AdapterKind::ActorCritic, StandardRlLoss::PolicyGradient(l)) => l,
        (AdapterKind::Value, StandardRlLoss::SelfTd(l)) => l,
        _ => {
            return Err(Error::config(
                "carol_plus",
                format!("{standard:?} does not fit the {kind:?} adapter"),
            ))
        }
    };
    if lambda == 0.0 {
        return Ok(carol_loss);
    }
    Ok(carol_loss + lambda * extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{NetworkQ, QTable, TabularPolicy};
    use crate::mdp::{ActionSpec, Spaces};
    use crate::nn::{Activation, MlpConfig};

    fn disc() -> Spaces {
        Spaces {
            state_dim: 2,
            action: ActionSpec::Discrete(2),
        }
    }

    fn table(rows: &[[f64; 2]]) -> QFunction {
        let spaces = Spaces {
            state_dim: rows.len(),
            action: ActionSpec::Discrete(2),
        };
        let mut q = QTable::zeros(spaces, 0.9).unwrap();
        for (s, r) in rows.iter().enumerate() {
            q.set(s, 0, r[0]);
            q.set(s, 1, r[1]);
        }
        QFunction::Tabular(q)
    }

    #[test]
    fn q_next_examples() {
        let q1 = table(&[[1.0, 3.0]]);
        let q2 = table(&[[4.0, 2.0]]);
        let w = SimilarityWeights::from_weights(vec![0.25, 0.75]).unwrap();
        let v = q_next_target(&[q1.clone(), q2.clone()], &w, &[1.0], false).unwrap();
        assert!((v - 3.75).abs() < 1e-12);
        assert_eq!(
            q_next_target(&[q1.clone(), q2.clone()], &w, &[1.0], true).unwrap(),
            0.0
        );
        let one = SimilarityWeights::one_hot(2, 1).unwrap();
        assert_eq!(
            q_next_target(&[q1.clone(), q2], &one, &[1.0], false).unwrap(),
            4.0
        );
        let same = q_next_target(&[q1.clone(), q1.clone()], &w, &[1.0], false).unwrap();
        assert_eq!(same, 3.0);
        assert!(q_next_target(&[q1], &w, &[1.0], false).is_err());
    }

    #[test]
    fn q_next_rejects_continuous_sources() {
        let spaces = Spaces {
            state_dim: 1,
            action: ActionSpec::continuous(vec![-1.0], vec![1.0]).unwrap(),
        };
        let q = QFunction::Network(
            NetworkQ::new(spaces, &MlpConfig::new(vec![3], Activation::Tanh), 0).unwrap(),
        );
        let w = SimilarityWeights::uniform(1).unwrap();
        assert!(matches!(
            q_next_target(&[q], &w, &[0.0], false),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn td_loss_examples() {
        let q = table(&[[1.0, 0.0], [0.0, 0.0]]);
        let sample = TransitionSample {
            state: vec![1.0, 0.0],
            action: Action::Discrete(0),
            reward: 0.5,
            next_state: vec![0.0, 1.0],
            done: false,
            truncated: false,
        };
        let (loss, grads) = td_loss(&q, std::slice::from_ref(&sample), &[1.0], 0.9).unwrap();
        assert!((loss - 0.16).abs() < 1e-12);
        assert!((grads[0] - 2.0 * (1.0 - 1.4)).abs() < 1e-12);
        let (zero, _) =
            td_loss(&q, std::slice::from_ref(&sample), &[(1.0 - 0.5) / 0.9], 0.9).unwrap();
        assert!(zero.abs() < 1e-24);
        assert!(matches!(
            td_loss(&q, &[sample], &[], 0.9),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn distillation_onto_identical_teacher_is_stationary() {
        let student =
            NetworkPolicy::new(disc(), &MlpConfig::new(vec![4], Activation::Tanh), 7).unwrap();
        let teacher = Policy::Network(student.clone());
        let states = vec![vec![1.0, 0.0], vec![0.3, -0.2]];
        let w = SimilarityWeights::uniform(1).unwrap();
        let (loss, grads) = policy_distill_loss(&student, &[teacher], &w, &states, 1.0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grads.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn families_must_match() {
        let student =
            NetworkPolicy::new(disc(), &MlpConfig::new(vec![4], Activation::Tanh), 7).unwrap();
        let cont = Spaces {
            state_dim: 2,
            action: ActionSpec::continuous(vec![-1.0], vec![1.0]).unwrap(),
        };
        let gauss = Policy::Network(
            NetworkPolicy::new(cont, &MlpConfig::new(vec![4], Activation::Tanh), 1).unwrap(),
        );
        let w = SimilarityWeights::uniform(1).unwrap();
        assert!(matches!(
            policy_distill_loss(&student, &[gauss], &w, &[vec![0.0, 0.0]], 1.0),
            Err(Error::Domain(_))
        ));
        let tab = Policy::Tabular(TabularPolicy {
            actions: vec![1, 0],
            spaces: disc(),
        });
        assert!(policy_distill_loss(&student, &[tab], &w, &[vec![1.0, 0.0]], 1.0).is_ok());
    }

    #[test]
    fn tabular_critics_are_unsupported_for_guidance() {
        let actor =
            NetworkPolicy::new(disc(), &MlpConfig::new(vec![4], Activation::Tanh), 7).unwrap();
        let w = SimilarityWeights::uniform(1).unwrap();
        let q = table(&[[0.0, 1.0], [1.0, 0.0]]);
        assert!(matches!(
            critic_guidance_loss(&actor, &[q], &w, &[vec![1.0, 0.0]]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn plus_loss_kinds() {
        assert_eq!(
            carol_plus_loss(
                AdapterKind::Policy,
                2.0,
                StandardRlLoss::PolicyGradient(5.0),
                0.0
            )
            .unwrap(),
            2.0
        );
        assert_eq!(
            carol_plus_loss(AdapterKind::Value, 2.0, StandardRlLoss::SelfTd(5.0), 0.5).unwrap(),
            4.5
        );
        assert!(matches!(
            carol_plus_loss(AdapterKind::Policy, 2.0, StandardRlLoss::SelfTd(5.0), 0.5),
            Err(Error::Config { .. })
        ));
        assert!(
            carol_plus_loss(AdapterKind::Value, 2.0, StandardRlLoss::SelfTd(5.0), -1.0).is_err()
        );
    }
}
