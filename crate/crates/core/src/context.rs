//! Transition models per source task, probe scoring and similarity weights.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::Knowledge;
use crate::mdp::{rollout, Actor, Spaces, TaskHandle, TransitionSample};
use crate::nn::{self, AdamState, Mlp, MlpConfig};
use crate::par;
use crate::rng::{self, Stream};

const STD_FLOOR: f64 = 1e-6;
const MIN_FIT_SAMPLES: usize = 10;
const MODEL_MAGIC: &[u8; 4] = b"CKTM";

/// Per-dimension affine normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for (j, v) in r.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                // Constant features are left unscaled so unseen values stay bounded.
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Learned next-state predictor `f(s, a) ≈ s⁺`. The network works on
/// standardized inputs and predicts the standardized state increment.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel {
    pub net: Mlp,
    pub spaces: Spaces,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
}

impl TransitionModel {
    pub fn state_dim(&self) -> usize {
        self.spaces.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spaces.action.encoded_dim()
    }

    fn encode(&self, sample: &TransitionSample) -> Result<Vec<f64>> {
        let x = self
            .spaces
            .encode_state_action(&sample.state, &sample.action)?;
        Ok(self.input_norm.apply(&x))
    }

    pub fn predict(&self, sample: &TransitionSample) -> Result<Vec<f64>> {
        if sample.state.len() != self.state_dim() {
            return Err(Error::domain(format!(
                "probe state has {} dims, model expects {}",
                sample.state.len(),
                self.state_dim()
            )));
        }
        let out = self.net.forward(&self.encode(sample)?)?;
        Ok(out
            .iter()
            .zip(&sample.state)
            .enumerate()
            .map(|(j, (o, s))| s + o * self.output_norm.std[j] + self.output_norm.mean[j])
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MODEL_MAGIC.to_vec();
        crate::harness::codec::encode_spaces(&self.spaces, &mut out);
        for v in [
            &self.input_norm.mean,
            &self.input_norm.std,
            &self.output_norm.mean,
            &self.output_norm.std,
        ] {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        nn::io::encode(&self.net, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = nn::io::Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Data("not a transition model file".into()));
        }
        let spaces = crate::harness::codec::decode_spaces(&mut r)?;
        let mut vecs = Vec::with_capacity(4);
        for _ in 0..4 {
            let n = r.u64()? as usize;
            vecs.push((0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?);
        }
        let net = nn::io::decode(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Data("trailing bytes after transition model".into()));
        }
        let out_std = vecs.pop().unwrap();
        let out_mean = vecs.pop().unwrap();
        let in_std = vecs.pop().unwrap();
        let in_mean = vecs.pop().unwrap();
        let in_dim = spaces.state_dim + spaces.action.encoded_dim();
        if net.input_dim() != in_dim
            || net.output_dim() != spaces.state_dim
            || in_mean.len() != in_dim
            || in_std.len() != in_dim
            || out_mean.len() != spaces.state_dim
            || out_std.len() != spaces.state_dim
        {
            return Err(Error::Data("transition model dimensions disagree".into()));
        }
        Ok(TransitionModel {
            net,
            spaces,
            input_norm: Standardizer {
                mean: in_mean,
                std: in_std,
            },
            output_norm: Standardizer {
                mean: out_mean,
                std: out_std,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub net: MlpConfig,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_holdout")]
    pub holdout_frac: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
}

fn default_holdout() -> f64 {
    0.1
}

fn default_batch() -> usize {
    64
}

fn sample_words(sample: &TransitionSample) -> Vec<u64> {
    let mut words: Vec<u64> = sample.state.iter().map(|v| v.to_bits()).collect();
    match &sample.action {
        crate::mdp::Action::Discrete(a) => words.push(*a as u64),
        crate::mdp::Action::Continuous(v) => words.extend(v.iter().map(|x| x.to_bits())),
    }
    words.extend(sample.next_state.iter().map(|v| v.to_bits()));
    words
}

/// Holdout membership of every sample. The `k`-th copy of a transition is
/// hashed together with `k`, so repeated transitions (common in discrete
/// tasks) are spread over both sides and reordering the samples keeps the
/// membership multiset fixed.
pub fn holdout_mask(samples: &[TransitionSample], frac: f64, seed: u64) -> Vec<bool> {
    let mut seen: HashMap<Vec<u64>, u64> = HashMap::new();
    samples
        .iter()
        .map(|s| {
            let key = sample_words(s);
            let count = seen.entry(key.clone()).or_insert(0);
            let mut words = vec![seed, *count];
            *count += 1;
            words.extend(key);
            (rng::mix(&words) as f64) / (u64::MAX as f64 + 1.0) < frac
        })
        .collect()
}

/// Fits `f(s, a)` by minibatch Adam on the squared next-state error and
/// reports the held-out per-sample squared error in original units.
pub fn fit_transition_model(
    samples: &[TransitionSample],
    spaces: &Spaces,
    cfg: &FitConfig,
) -> Result<(TransitionModel, f64)> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::Data(format!(
            "need at least {MIN_FIT_SAMPLES} samples to fit a transition model, got {}",
            samples.len()
        )));
    }
    if !(0.0..0.5).contains(&cfg.holdout_frac) {
        return Err(Error::config("holdout_frac", "must lie in [0, 0.5)"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    for s in samples {
        if s.state.len() != spaces.state_dim || s.next_state.len() != spaces.state_dim {
            return Err(Error::domain("sample state width does not match the task"));
        }
    }
    let mask = holdout_mask(samples, cfg.holdout_frac, cfg.seed);
    let mut holdout = Vec::new();
    let mut train = Vec::new();
    for (s, &h) in samples.iter().zip(&mask) {
        if h {
            holdout.push(s);
        } else {
            train.push(s);
        }
    }
    let train = if train.is_empty() {
        holdout.clone()
    } else {
        train
    };

    let inputs = train
        .iter()
        .map(|s| spaces.encode_state_action(&s.state, &s.action))
        .collect::<Result<Vec<_>>>()?;
    let deltas: Vec<Vec<f64>> = train
        .iter()
        .map(|s| {
            s.next_state
                .iter()
                .zip(&s.state)
                .map(|(n, c)| n - c)
                .collect()
        })
        .collect();
    let in_dim = spaces.state_dim + spaces.action.encoded_dim();
    let input_norm = Standardizer::fit(inputs.iter().map(|v| v.as_slice()), in_dim);
    let output_norm = Standardizer::fit(deltas.iter().map(|v| v.as_slice()), spaces.state_dim);
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| input_norm.apply(x)).collect();
    let ys: Vec<Vec<f64>> = deltas.iter().map(|d| output_norm.apply(d)).collect();

    let mut model = TransitionModel {
        net: cfg.net.build(in_dim, spaces.state_dim, cfg.seed)?,
        spaces: spaces.clone(),
        input_norm,
        output_norm,
    };
    let mut adam = AdamState::for_mlp(&model.net);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle_rng = rng::rng_for(cfg.seed, Stream::Split, 0);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let (grad, loss) = batch_gradient(&model.net, batch, &xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    episode: epoch,
                    reason: "transition model loss is not finite".into(),
                });
            }
            adam.update(model.net.params_mut(), &grad, cfg.lr)?;
        }
    }

    let eval_set = if holdout.is_empty() { &train } else { &holdout };
    let mse = eval_set
        .iter()
        .map(|s| sample_error(&model, s))
        .sum::<Result<f64>>()?
        / eval_set.len() as f64;
    Ok((model, mse))
}

/// Mean-squared-error gradient over one minibatch. Partial sums are
/// computed per chunk and added in chunk order, so the result does not
/// depend on the thread count.
fn batch_gradient(
    net: &Mlp,
    batch: &[usize],
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    const CHUNK: usize = 16;
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let partials = par::map(&chunks, |chunk| -> Result<(Vec<f64>, f64)> {
        let mut g = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for &i in chunk.iter() {
            let trace = net.forward_trace(&xs[i])?;
            let up: Vec<f64> = trace
                .output()
                .iter()
                .zip(&ys[i])
                .map(|(o, y)| 2.0 * (o - y) * scale)
                .collect();
            loss += trace
                .output()
                .iter()
                .zip(&ys[i])
                .map(|(o, y)| (o - y).powi(2))
                .sum::<f64>()
                * scale;
            net.backward_trace(&trace, &up, &mut g)?;
        }
        Ok((g, loss))
    });
    let mut grad = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    for p in partials {
        let (g, l) = p?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        loss += l;
    }
    Ok((grad, loss))
}

fn sample_error(model: &TransitionModel, sample: &TransitionSample) -> Result<f64> {
    let pred = model.predict(sample)?;
    if sample.next_state.len() != pred.len() {
        return Err(Error::domain(
            "probe next-state width does not match the model",
        ));
    }
    Ok(pred
        .iter()
        .zip(&sample.next_state)
        .map(|(p, t)| (p - t).powi(2))
        .sum())
}

/// `Y = Σ_k ‖f(s_k, a_k) − s⁺_k‖²` over the probe, in original units.
pub fn prediction_error(model: &TransitionModel, probe: &[TransitionSample]) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::domain("probe is empty"));
    }
    probe.iter().map(|s| sample_error(model, s)).sum()
}

/// Scores each model against the shared probe, one model per worker.
pub fn score_models(models: &[TransitionModel], probe: &[TransitionSample]) -> Result<Vec<f64>> {
    par::map(models, |m| prediction_error(m, probe))
        .into_iter()
        .collect()
}

/// How raw prediction errors are scaled before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizationMode {
    /// `softmax(−Y)`.
    #[default]
    RawSum,
    /// `softmax(−(Y / m) / τ)`, independent of the probe size.
    PerSampleMean { tau: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub weights: Vec<f64>,
    pub raw_scores: Vec<f64>,
    pub mode: NormalizationMode,
}

impl SimilarityWeights {
    /// Equal weight on each of `n` sources.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("need at least one source"));
        }
        Ok(SimilarityWeights {
            weights: vec![1.0 / n as f64; n],
            raw_scores: vec![0.0; n],
            mode: NormalizationMode::RawSum,
        })
    }

    /// All weight on source `k` of `n`.
    pub fn one_hot(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::domain(format!(
                "source index {k} out of range for {n} sources"
            )));
        }
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        Ok(SimilarityWeights {
            weights,
            raw_scores: vec![0.0; n],
            mode: NormalizationMode::RawSum,
        })
    }

    /// Explicit weights; must be nonnegative and sum to one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("need at least one source"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("weights sum to {total}, expected 1")));
        }
        let n = weights.len();
        Ok(SimilarityWeights {
            weights,
            raw_scores: vec![0.0; n],
            mode: NormalizationMode::RawSum,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn argmax(&self) -> usize {
        crate::knowledge::argmax(&self.weights)
    }
}

pub fn similarity_weights(
    ys: &[f64],
    mode: NormalizationMode,
    sample_count: usize,
) -> Result<SimilarityWeights> {
    if ys.is_empty() {
        return Err(Error::domain("no prediction errors to normalize"));
    }
    if ys.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
        return Err(Error::domain(
            "prediction errors must be finite and nonnegative",
        ));
    }
    let logits: Vec<f64> = match mode {
        NormalizationMode::RawSum => ys.iter().map(|y| -y).collect(),
        NormalizationMode::PerSampleMean { tau } => {
            if !(tau > 0.0) {
                return Err(Error::config("tau", "must be positive"));
            }
            if sample_count == 0 {
                return Err(Error::config("sample_count", "must be positive"));
            }
            ys.iter()
                .map(|y| -(y / sample_count as f64) / tau)
                .collect()
        }
    };
    Ok(SimilarityWeights {
        weights: nn::softmax(&logits, 1.0)?,
        raw_scores: ys.to_vec(),
        mode,
    })
}

/// Behaviour used to gather target probe samples.
#[derive(Clone, Copy, Debug)]
pub enum ProbePolicy<'a> {
    UniformRandom,
    /// Policies are sampled; Q-functions act ε-greedily with ε = 0.1.
    Knowledge(&'a Knowledge),
}

/// Gathers exactly `n_samples` transitions across as many episodes as needed.
pub fn collect_probe(
    task: &TaskHandle,
    probe: ProbePolicy<'_>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TransitionSample>> {
    if n_samples == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    let actor = match probe {
        ProbePolicy::UniformRandom => Actor::UniformRandom,
        ProbePolicy::Knowledge(k) => {
            k.check_task(task)?;
            match k {
                Knowledge::Policy(p) | Knowledge::ActorCritic { actor: p, .. } => Actor::Sampled(p),
                Knowledge::Value(q) => Actor::EpsilonGreedy { q, epsilon: 0.1 },
            }
        }
    };
    let mut out = Vec::with_capacity(n_samples);
    let mut episode = 0u64;
    while out.len() < n_samples {
        let ep_seed = rng::derive(seed, Stream::Episode, episode);
        let traj = rollout(task, &actor, task.episode_cap(), ep_seed)?;
        let need = n_samples - out.len();
        out.extend(traj.into_samples().into_iter().take(need));
        episode += 1;
    }
    Ok(out)
}
