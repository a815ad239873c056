//! Comparison methods: uniform-weight distillation, learning from scratch
//! and direct evaluation of each source.

use serde::{Deserialize, Serialize};

use crate::adaptation::{self, run_value_loop, AdaptConfig, QModelConfig, ValueObjective};
use crate::context::SimilarityWeights;
use crate::error::Result;
use crate::knowledge::{Knowledge, NetworkPolicy, Policy, QFunction};
use crate::mdp::TaskHandle;
use crate::nn::MlpConfig;
use crate::rng::{self, Stream};
use crate::training::{evaluate_knowledge, LearningCurve};

/// Policy distillation with every teacher weighted equally.
pub fn pd_adapt(
    teachers: &[Policy],
    target: &TaskHandle,
    student_config: &MlpConfig,
    cfg: &AdaptConfig,
) -> Result<(NetworkPolicy, LearningCurve)> {
    let w = SimilarityWeights::uniform(teachers.len())?;
    adaptation::carol_policy_adapt(teachers, &w, target, student_config, cfg)
}

/// What a from-scratch learner trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LfsModel {
    /// A policy network trained by REINFORCE with a mean-return baseline.
    Policy { net: MlpConfig },
    /// A Q-function trained by ε-greedy Q-learning from replay.
    Value { q: QModelConfig },
}

/// Standard RL on the target with the adapted model's architecture,
/// initialization, optimizer and evaluation cadence.
pub fn lfs_train(
    target: &TaskHandle,
    model: &LfsModel,
    cfg: &AdaptConfig,
) -> Result<(Knowledge, LearningCurve)> {
    match model {
        LfsModel::Policy { net } => {
            let (p, curve) = adaptation::reinforce_train(target, net, cfg)?;
            Ok((Knowledge::Policy(Policy::Network(p)), curve))
        }
        LfsModel::Value { q } => {
            let qg = q.build(
                &target.spaces(),
                cfg.gamma,
                rng::derive(cfg.seed, Stream::Init, 0),
            )?;
            let w = SimilarityWeights::uniform(1)?;
            let (q, curve) = run_value_loop(
                &[] as &[QFunction],
                &w,
                target,
                qg,
                ValueObjective::SelfTd,
                cfg,
            )?;
            Ok((Knowledge::Value(q), curve))
        }
    }
}

/// Number of evaluation episodes used when applying sources directly.
pub const SK_EPISODES: usize = 20;

/// Mean and standard deviation of each source's return on the target.
pub fn sk_eval(
    sources: &[Knowledge],
    target: &TaskHandle,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    sources
        .iter()
        .map(|k| evaluate_knowledge(target, k, n_episodes, seed))
        .collect()
}
