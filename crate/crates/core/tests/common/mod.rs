//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use carol_kit::context::SimilarityWeights;
use carol_kit::envs::{make_gridslip, EnvSpec, GridSlipSpec};
use carol_kit::knowledge::{NetworkPolicy, NetworkQ, Policy, QFunction};
use carol_kit::mdp::{Action, ActionSpec, Spaces, TaskHandle, TransitionSample};
use carol_kit::nn::{Activation, Mlp};
use carol_kit::rng::{rng_for, Rng, Stream};
use rand::Rng as _;

pub const FD_EPS: f64 = 1e-6;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` around `params`.
pub fn numeric_grad(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + FD_EPS;
            let up = f(&p);
            p[i] = x - FD_EPS;
            let down = f(&p);
            p[i] = x;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

pub fn gauss_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Identity];

/// Random MLP `k`: depth, widths and activations cycle through every
/// combination of hidden and output activation.
pub fn random_mlp(k: u64) -> Mlp {
    let mut rng = rng_for(k, Stream::Init, 99);
    let hidden_act = ACTIVATIONS[(k % 3) as usize];
    let out_act = ACTIVATIONS[((k / 3) % 3) as usize];
    let depth = (k % 4) as usize;
    let mut sizes = vec![rng.gen_range(1..6)];
    for _ in 0..depth {
        sizes.push(rng.gen_range(1..8));
    }
    sizes.push(rng.gen_range(1..5));
    let acts = vec![hidden_act; depth];
    // Random biases too: zero biases behind a dead ReLU layer would put
    // pre-activations exactly on the kink.
    let mut net = Mlp::new(sizes, acts, out_act, k).unwrap();
    for p in net.params_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    net
}

/// Max relative error of the parameter and input gradients of
/// `u · net(x)` for random `u` and `x`.
pub fn mlp_gradient_error(k: u64) -> f64 {
    let net = random_mlp(k);
    let mut rng = rng_for(k, Stream::Train, 7);
    let x = gauss_vec(&mut rng, net.input_dim(), 1.5);
    let u = gauss_vec(&mut rng, net.output_dim(), 1.0);
    let (gp, gx) = net.backward(&x, &u).unwrap();
    let dot = |net: &Mlp, x: &[f64]| -> f64 {
        net.forward(x)
            .unwrap()
            .iter()
            .zip(&u)
            .map(|(a, b)| a * b)
            .sum()
    };
    let np = numeric_grad(net.params(), |p| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        dot(&n, &x)
    });
    let nx = numeric_grad(&x, |xx| dot(&net, xx));
    max_rel_err(&gp, &np).max(max_rel_err(&gx, &nx))
}

pub fn discrete_spaces(state_dim: usize, n_actions: usize) -> Spaces {
    Spaces {
        state_dim,
        action: ActionSpec::Discrete(n_actions),
    }
}

pub fn box_spaces(state_dim: usize, action_dim: usize) -> Spaces {
    Spaces {
        state_dim,
        action: ActionSpec::continuous(vec![-2.0; action_dim], vec![2.0; action_dim]).unwrap(),
    }
}

pub fn tanh_config(hidden: Vec<usize>) -> carol_kit::nn::MlpConfig {
    carol_kit::nn::MlpConfig::new(hidden, Activation::Tanh)
}

pub fn random_states(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| gauss_vec(rng, dim, 1.0)).collect()
}

pub fn random_weights(rng: &mut Rng, n: usize) -> SimilarityWeights {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    SimilarityWeights::from_weights(raw.iter().map(|r| r / total).collect()).unwrap()
}

pub fn with_params(p: &NetworkPolicy, params: &[f64]) -> NetworkPolicy {
    let mut out = p.clone();
    out.net.params_mut().copy_from_slice(params);
    out
}

pub fn q_with_params(q: &NetworkQ, params: &[f64]) -> QFunction {
    let mut out = q.clone();
    out.net.params_mut().copy_from_slice(params);
    QFunction::Network(out)
}

pub fn network_teachers(spaces: &Spaces, n: usize, seed: u64) -> Vec<Policy> {
    (0..n)
        .map(|i| {
            Policy::Network(
                NetworkPolicy::new(spaces.clone(), &tanh_config(vec![5]), seed + 10 + i as u64)
                    .unwrap(),
            )
        })
        .collect()
}

pub fn network_critics(spaces: &Spaces, n: usize, seed: u64) -> Vec<QFunction> {
    (0..n)
        .map(|i| {
            QFunction::Network(
                NetworkQ::new(spaces.clone(), &tanh_config(vec![6]), seed + 20 + i as u64).unwrap(),
            )
        })
        .collect()
}

pub fn random_batch(rng: &mut Rng, spaces: &Spaces, n: usize) -> Vec<TransitionSample> {
    (0..n)
        .map(|_| {
            let action = match &spaces.action {
                ActionSpec::Discrete(k) => Action::Discrete(rng.gen_range(0..*k)),
                ActionSpec::ContinuousBox { lo, .. } => {
                    Action::Continuous(gauss_vec(rng, lo.len(), 1.0))
                }
            };
            TransitionSample {
                state: gauss_vec(rng, spaces.state_dim, 1.0),
                action,
                reward: rng.gen_range(-1.0..1.0),
                next_state: gauss_vec(rng, spaces.state_dim, 1.0),
                done: false,
                truncated: false,
            }
        })
        .collect()
}

/// The 8x4 cliff grid used by the transfer experiments: start bottom-left,
/// goal bottom-right, pits along the bottom row in between.
pub fn cliff_spec(slip_p: f64) -> GridSlipSpec {
    let mut s = GridSlipSpec::new(8, 4, slip_p).with_pits((1..7).map(|x| [x, 3]).collect());
    s.start = [0, 3];
    s.goal_reward = 60.0;
    s
}

pub const CLIFF_CAP: usize = 100;
pub const CLIFF_GAMMA: f64 = 0.99;

pub fn cliff(slip_p: f64, seed: u64) -> TaskHandle {
    make_gridslip(cliff_spec(slip_p), seed, CLIFF_CAP).unwrap()
}

pub fn cliff_env(slip_p: f64) -> EnvSpec {
    EnvSpec::GridSlip(cliff_spec(slip_p))
}

fn one_hot_states(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x = vec![0.0; dim];
            x[rng.gen_range(0..dim)] = 1.0;
            x
        })
        .collect()
}

/// Max relative finite-difference error of every composed loss, by name.
pub fn loss_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use carol_kit::adaptation::losses::*;
    use carol_kit::knowledge::TabularPolicy;

    let mut rng = rng_for(seed, Stream::Train, 11);
    let mut out = Vec::new();
    let temperature = 1.5;

    for (name, spaces) in [
        ("softmax", discrete_spaces(3, 4)),
        ("gaussian", box_spaces(3, 2)),
    ] {
        let student = NetworkPolicy::new(spaces.clone(), &tanh_config(vec![5]), seed).unwrap();
        let teachers = network_teachers(&spaces, 2, seed);
        let critics = network_critics(&spaces, 2, seed);
        let w = random_weights(&mut rng, 2);
        let states = random_states(&mut rng, 4, 3);
        let p0 = student.net.params().to_vec();

        let (_, g) = policy_distill_loss(&student, &teachers, &w, &states, temperature).unwrap();
        let n = numeric_grad(&p0, |p| {
            policy_distill_loss(
                &with_params(&student, p),
                &teachers,
                &w,
                &states,
                temperature,
            )
            .unwrap()
            .0
        });
        out.push((
            if name == "softmax" {
                "distill/softmax"
            } else {
                "distill/gaussian"
            },
            max_rel_err(&g, &n),
        ));

        let (_, g) = critic_guidance_loss(&student, &critics, &w, &states).unwrap();
        let n = numeric_grad(&p0, |p| {
            critic_guidance_loss(&with_params(&student, p), &critics, &w, &states)
                .unwrap()
                .0
        });
        out.push((
            if name == "softmax" {
                "critic/softmax"
            } else {
                "critic/gaussian"
            },
            max_rel_err(&g, &n),
        ));

        let beta = 0.7;
        let (_, g) = actor_critic_loss(
            &student,
            &teachers,
            &critics,
            &w,
            &states,
            temperature,
            beta,
        )
        .unwrap();
        let n = numeric_grad(&p0, |p| {
            actor_critic_loss(
                &with_params(&student, p),
                &teachers,
                &critics,
                &w,
                &states,
                temperature,
                beta,
            )
            .unwrap()
            .0
        });
        out.push((
            if name == "softmax" {
                "actor_critic/softmax"
            } else {
                "actor_critic/gaussian"
            },
            max_rel_err(&g, &n),
        ));
    }

    // Tabular teachers act on one-hot states.
    let spaces = discrete_spaces(5, 3);
    let student = NetworkPolicy::new(spaces.clone(), &tanh_config(vec![4]), seed).unwrap();
    let teachers: Vec<Policy> = (0..2)
        .map(|_| {
            Policy::Tabular(TabularPolicy {
                actions: (0..5).map(|_| rng.gen_range(0..3)).collect(),
                spaces: spaces.clone(),
            })
        })
        .collect();
    let w = random_weights(&mut rng, 2);
    let states = one_hot_states(&mut rng, 4, 5);
    let (_, g) = policy_distill_loss(&student, &teachers, &w, &states, temperature).unwrap();
    let n = numeric_grad(student.net.params(), |p| {
        policy_distill_loss(
            &with_params(&student, p),
            &teachers,
            &w,
            &states,
            temperature,
        )
        .unwrap()
        .0
    });
    out.push(("distill/tabular_teachers", max_rel_err(&g, &n)));

    // TD loss of a network Q against fixed targets.
    for spaces in [discrete_spaces(3, 4), box_spaces(3, 2)] {
        let q = NetworkQ::new(spaces.clone(), &tanh_config(vec![6]), seed + 5).unwrap();
        let batch = random_batch(&mut rng, &spaces, 6);
        let q_next: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, g) = td_loss(&QFunction::Network(q.clone()), &batch, &q_next, 0.9).unwrap();
        let n = numeric_grad(q.net.params(), |p| {
            td_loss(&q_with_params(&q, p), &batch, &q_next, 0.9)
                .unwrap()
                .0
        });
        let name = if spaces.action.is_discrete() {
            "td/discrete"
        } else {
            "td/continuous"
        };
        out.push((name, max_rel_err(&g, &n)));
    }
    out
}
