//! The four pipeline steps behind the CLI. Each reads and extends the
//! manifest of its run directory and skips work whose inputs are unchanged.

use std::path::Path;

use crate::adaptation::{self, AdaptConfig};
use crate::baselines::{self, LfsModel};
use crate::context::{self, ProbePolicy, SimilarityWeights, TransitionModel};
use crate::error::{Error, Result};
use crate::harness::codec::{knowledge_from_bytes, knowledge_to_bytes};
use crate::harness::config::{ExperimentConfig, Method, Paradigm, SourceTraining, WeightsFile};
use crate::harness::manifest::{sha256_hex, Manifest};
use crate::harness::report;
use crate::harness::results::{self, SimilarityRow, SkRow, SummaryRow};
use crate::knowledge::{Knowledge, Policy, QFunction};
use crate::mdp::TaskHandle;
use crate::par;
use crate::rng::{self, Stream};
use crate::training::{self, LearningCurve};

pub const CONFIG_FILE: &str = "config.toml";
pub const SIMILARITY_FILE: &str = "similarity.csv";

pub fn knowledge_path(source: &str) -> String {
    format!("sources/{source}.knowledge")
}

pub fn model_path(source: &str) -> String {
    format!("sources/{source}.model")
}

pub fn curve_path(method: Method, seed: u64) -> String {
    format!("runs/{}/seed-{seed}.csv", method.name())
}

pub fn adapted_path(method: Method, seed: u64) -> String {
    format!("runs/{}/seed-{seed}.knowledge", method.name())
}

fn digest_parts(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{0}").as_bytes())
}

fn toml_of<T: serde::Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config fragments are representable as TOML")
}

/// Opens the run directory's manifest, creating it for a fresh directory.
/// A directory that belongs to another experiment is refused.
fn open_manifest(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let canonical = cfg.to_toml();
    let digest = sha256_hex(canonical.as_bytes());
    let mut m = match Manifest::load_if_present(out)? {
        Some(m) if m.experiment_id != cfg.experiment_id => {
            return Err(Error::config(
                "experiment_id",
                format!("{} holds experiment `{}`", out.display(), m.experiment_id),
            ));
        }
        Some(m) => m,
        None => Manifest::new(&cfg.experiment_id, &digest),
    };
    m.config_digest = digest;
    m.record(out, CONFIG_FILE, canonical.as_bytes(), None)?;
    Ok(m)
}

fn train_source(cfg: &ExperimentConfig, task: &TaskHandle) -> Result<Knowledge> {
    let from_table = |q: crate::knowledge::QTable| Knowledge::ActorCritic {
        actor: Policy::Tabular(q.greedy_policy()),
        critic: QFunction::Tabular(q),
    };
    Ok(match &cfg.source_training {
        SourceTraining::ValueIteration { gamma, tol } => {
            from_table(training::value_iteration(task, *gamma, *tol)?)
        }
        SourceTraining::QLearning { train } => from_table(training::train_q_tabular(task, train)?),
        SourceTraining::PolicyGradient {
            actor,
            critic,
            train,
        } => {
            let out = training::train_policy_gradient(task, actor, critic, train)?;
            Knowledge::ActorCritic {
                actor: Policy::Network(out.policy),
                critic: QFunction::Network(out.critic),
            }
        }
    })
}

fn fit_source_model(
    cfg: &ExperimentConfig,
    index: usize,
    task: &TaskHandle,
) -> Result<TransitionModel> {
    let seed = rng::derive(cfg.context.seed, Stream::Probe, index as u64 + 1);
    let samples =
        context::collect_probe(task, ProbePolicy::UniformRandom, cfg.context.samples, seed)?;
    Ok(context::fit_transition_model(&samples, &task.spaces(), &cfg.context.fit)?.0)
}

/// Trains every source and fits its transition model, writing
/// `sources/<name>.knowledge` and `sources/<name>.model`.
pub fn train_sources(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let mut m = open_manifest(cfg, out)?;
    let training = toml_of(&cfg.source_training);
    let fitting = toml_of(&cfg.context);
    let jobs: Vec<(usize, String, String)> = cfg
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let task = toml_of(s);
            (
                i,
                digest_parts(&[&task, &training]),
                digest_parts(&[&task, &fitting, &i.to_string()]),
            )
        })
        .collect();
    let mut stale = Vec::new();
    for (i, k_in, m_in) in &jobs {
        let name = &cfg.sources[*i].name;
        stale.push((
            *i,
            !m.is_current(out, &knowledge_path(name), k_in)?,
            !m.is_current(out, &model_path(name), m_in)?,
        ));
    }
    let built = par::map(
        &stale,
        |&(i, need_k, need_m)| -> Result<(Option<Vec<u8>>, Option<Vec<u8>>)> {
            let task = cfg.sources[i].task()?;
            let k = if need_k {
                Some(knowledge_to_bytes(&train_source(cfg, &task)?))
            } else {
                None
            };
            let model = if need_m {
                Some(fit_source_model(cfg, i, &task)?.to_bytes())
            } else {
                None
            };
            Ok((k, model))
        },
    );
    for ((i, k_in, m_in), res) in jobs.into_iter().zip(built) {
        let (k, model) = res?;
        let name = &cfg.sources[i].name;
        if let Some(bytes) = k {
            m.record(out, &knowledge_path(name), &bytes, Some(k_in))?;
        }
        if let Some(bytes) = model {
            m.record(out, &model_path(name), &bytes, Some(m_in))?;
        }
    }
    m.save(out)?;
    Ok(m)
}

pub fn load_source_knowledge(
    cfg: &ExperimentConfig,
    m: &Manifest,
    out: &Path,
) -> Result<Vec<Knowledge>> {
    cfg.sources
        .iter()
        .map(|s| {
            let rel = knowledge_path(&s.name);
            knowledge_from_bytes(&m.read_verified(out, &rel)?).map_err(|e| with_path(e, out, &rel))
        })
        .collect()
}

fn load_models(cfg: &ExperimentConfig, m: &Manifest, out: &Path) -> Result<Vec<TransitionModel>> {
    cfg.sources
        .iter()
        .map(|s| {
            let rel = model_path(&s.name);
            TransitionModel::from_bytes(&m.read_verified(out, &rel)?)
                .map_err(|e| with_path(e, out, &rel))
        })
        .collect()
}

fn with_path(e: Error, out: &Path, rel: &str) -> Error {
    match e {
        Error::Format { reason, .. } => Error::Format {
            path: out.join(rel),
            reason,
        },
        other => other,
    }
}

/// Scores the stored transition models on a fresh target probe and writes
/// the weight table to `similarity.csv`.
pub fn similarity(cfg: &ExperimentConfig, out: &Path) -> Result<(Manifest, Vec<SimilarityRow>)> {
    let mut m = train_sources(cfg, out)?;
    let model_digests: Vec<&str> = cfg
        .sources
        .iter()
        .map(|s| {
            m.get(&model_path(&s.name))
                .map(|a| a.sha256.as_str())
                .unwrap_or("")
        })
        .collect();
    let inputs = digest_parts(&[
        &toml_of(&cfg.target),
        &toml_of(&cfg.context),
        &model_digests.join(","),
    ]);
    if m.is_current(out, SIMILARITY_FILE, &inputs)? {
        let rows =
            results::similarity_from_csv(&m.read_verified(out, SIMILARITY_FILE)?, SIMILARITY_FILE)?;
        return Ok((m, rows));
    }
    let models = load_models(cfg, &m, out)?;
    let target = cfg.target.task()?;
    let probe_seed = rng::derive(cfg.context.seed, Stream::Probe, 0);
    let probe = context::collect_probe(
        &target,
        ProbePolicy::UniformRandom,
        cfg.context.probe_samples,
        probe_seed,
    )?;
    let ys = context::score_models(&models, &probe)?;
    let w = context::similarity_weights(&ys, cfg.context.mode, probe.len())?;
    let rows: Vec<SimilarityRow> = cfg
        .sources
        .iter()
        .zip(ys.iter().zip(&w.weights))
        .map(|(s, (&score, &weight))| SimilarityRow {
            source: s.name.clone(),
            score,
            weight,
        })
        .collect();
    m.record(
        out,
        SIMILARITY_FILE,
        &results::similarity_to_csv(&rows),
        Some(inputs),
    )?;
    m.save(out)?;
    Ok((m, rows))
}

/// Weights the adapters use: the override file when configured, else the
/// similarity table.
pub fn effective_weights(
    cfg: &ExperimentConfig,
    rows: &[SimilarityRow],
) -> Result<SimilarityWeights> {
    match &cfg.weights_override {
        Some(path) => {
            let file = WeightsFile::load(path)?;
            if file.weights.len() != cfg.sources.len() {
                return Err(Error::config(
                    "weights",
                    format!(
                        "{} weights for {} sources",
                        file.weights.len(),
                        cfg.sources.len()
                    ),
                ));
            }
            SimilarityWeights::from_weights(file.weights)
        }
        None => SimilarityWeights::from_weights(rows.iter().map(|r| r.weight).collect()),
    }
}

/// Outcome of one (method, seed) run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    /// Whether the run was skipped because its outputs were current.
    pub reused: bool,
}

struct Prepared<'a> {
    cfg: &'a ExperimentConfig,
    target: TaskHandle,
    sources: Vec<Knowledge>,
    weights: SimilarityWeights,
}

impl Prepared<'_> {
    fn policies(&self) -> Result<Vec<Policy>> {
        self.sources
            .iter()
            .map(|k| {
                k.policy()
                    .cloned()
                    .ok_or_else(|| Error::unsupported("source knowledge has no policy"))
            })
            .collect()
    }

    fn critics(&self) -> Result<Vec<QFunction>> {
        self.sources
            .iter()
            .map(|k| {
                k.q_function()
                    .cloned()
                    .ok_or_else(|| Error::unsupported("source knowledge has no Q-function"))
            })
            .collect()
    }

    /// The part of each source the paradigm transfers, for direct evaluation.
    fn transferred(&self) -> Result<Vec<Knowledge>> {
        Ok(match self.cfg.paradigm {
            Paradigm::Value => self.critics()?.into_iter().map(Knowledge::Value).collect(),
            Paradigm::Policy | Paradigm::ActorCritic => self
                .policies()?
                .into_iter()
                .map(Knowledge::Policy)
                .collect(),
        })
    }

    fn run(&self, method: Method, seed: u64) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
        let acfg = AdaptConfig {
            seed,
            ..self.cfg.adapt.clone()
        };
        let student = || {
            self.cfg
                .student
                .as_ref()
                .ok_or_else(|| Error::config("student", "required by this paradigm"))
        };
        let q_model = || {
            self.cfg
                .q_model
                .as_ref()
                .ok_or_else(|| Error::config("q_model", "required by the value paradigm"))
        };
        let w = &self.weights;
        let t = &self.target;
        let (knowledge, curve): (Knowledge, LearningCurve) = match (self.cfg.paradigm, method) {
            (_, Method::Sk) => {
                let rows = self.sk_rows(seed)?;
                return Ok((results::sk_to_csv(&rows), None));
            }
            (Paradigm::Policy, Method::Carol) => {
                let (p, c) =
                    adaptation::carol_policy_adapt(&self.policies()?, w, t, student()?, &acfg)?;
                (Knowledge::Policy(Policy::Network(p)), c)
            }
            (Paradigm::Policy, Method::CarolPlus) => {
                let (p, c) = adaptation::carol_plus_policy_adapt(
                    &self.policies()?,
                    w,
                    t,
                    student()?,
                    &acfg,
                )?;
                (Knowledge::Policy(Policy::Network(p)), c)
            }
            (Paradigm::ActorCritic, Method::Carol) => {
                let (p, c) = adaptation::carol_ac_adapt(
                    &self.policies()?,
                    &self.critics()?,
                    w,
                    t,
                    student()?,
                    &acfg,
                )?;
                (Knowledge::Policy(Policy::Network(p)), c)
            }
            (Paradigm::ActorCritic, Method::CarolPlus) => {
                let (p, c) = adaptation::carol_plus_ac_adapt(
                    &self.policies()?,
                    &self.critics()?,
                    w,
                    t,
                    student()?,
                    &acfg,
                )?;
                (Knowledge::Policy(Policy::Network(p)), c)
            }
            (Paradigm::Policy | Paradigm::ActorCritic, Method::Pd) => {
                let (p, c) = baselines::pd_adapt(&self.policies()?, t, student()?, &acfg)?;
                (Knowledge::Policy(Policy::Network(p)), c)
            }
            (Paradigm::Policy | Paradigm::ActorCritic, Method::Lfs) => baselines::lfs_train(
                t,
                &LfsModel::Policy {
                    net: student()?.clone(),
                },
                &acfg,
            )?,
            (Paradigm::Value, Method::Carol) => {
                let (q, c) =
                    adaptation::carol_value_adapt(&self.critics()?, w, t, q_model()?, &acfg)?;
                (Knowledge::Value(q), c)
            }
            (Paradigm::Value, Method::CarolPlus) => {
                let (q, c) =
                    adaptation::carol_plus_value_adapt(&self.critics()?, w, t, q_model()?, &acfg)?;
                (Knowledge::Value(q), c)
            }
            (Paradigm::Value, Method::Pd) => {
                return Err(Error::unsupported(
                    "pd distils policies; the value paradigm has none",
                ));
            }
            (Paradigm::Value, Method::Lfs) => baselines::lfs_train(
                t,
                &LfsModel::Value {
                    q: q_model()?.clone(),
                },
                &acfg,
            )?,
        };
        Ok((
            results::curve_to_csv(&curve),
            Some(knowledge_to_bytes(&knowledge)),
        ))
    }

    fn sk_rows(&self, seed: u64) -> Result<Vec<SkRow>> {
        let eval_seed = rng::derive(seed, Stream::Eval, 0);
        let stats = baselines::sk_eval(
            &self.transferred()?,
            &self.target,
            self.cfg.sk_episodes,
            eval_seed,
        )?;
        Ok(self
            .cfg
            .sources
            .iter()
            .zip(stats)
            .map(|(s, (mean_return, std_return))| SkRow {
                source: s.name.clone(),
                mean_return,
                std_return,
            })
            .collect())
    }
}

/// Runs every selected method on every seed (in parallel), writing
/// `runs/<method>/seed-<s>.csv` and, for adapted models,
/// `runs/<method>/seed-<s>.knowledge`. Completed runs are not repeated.
pub fn adapt(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunRecord>> {
    let (mut m, rows) = similarity(cfg, out)?;
    let prepared = Prepared {
        cfg,
        target: cfg.target.task()?,
        sources: load_source_knowledge(cfg, &m, out)?,
        weights: effective_weights(cfg, &rows)?,
    };
    let source_digests: Vec<&str> = cfg
        .sources
        .iter()
        .map(|s| {
            m.get(&knowledge_path(&s.name))
                .map(|a| a.sha256.as_str())
                .unwrap_or("")
        })
        .collect();
    let weight_bits: Vec<String> = prepared
        .weights
        .weights
        .iter()
        .map(|w| format!("{:016x}", w.to_bits()))
        .collect();
    let shared = digest_parts(&[
        &toml_of(&cfg.paradigm_fragment()),
        &toml_of(&cfg.adapt),
        &toml_of(&cfg.target),
        &source_digests.join(","),
        &weight_bits.join(","),
    ]);
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let inputs = digest_parts(&[&shared, method.name(), &seed.to_string()]);
            let current = m.is_current(out, &curve_path(method, seed), &inputs)?;
            jobs.push((method, seed, inputs, current));
        }
    }
    let outputs = par::map(&jobs, |(method, seed, _, current)| {
        if *current {
            Ok(None)
        } else {
            prepared.run(*method, *seed).map(Some)
        }
    });
    let mut records = Vec::new();
    for ((method, seed, inputs, current), res) in jobs.into_iter().zip(outputs) {
        if let Some((csv, knowledge)) = res? {
            if let Some(k) = knowledge {
                m.record(out, &adapted_path(method, seed), &k, Some(inputs.clone()))?;
            }
            m.record(out, &curve_path(method, seed), &csv, Some(inputs))?;
        }
        records.push(RunRecord {
            method,
            seed,
            reused: current,
        });
    }
    m.save(out)?;
    Ok(records)
}

impl ExperimentConfig {
    /// Settings that select and shape the adapted model.
    fn paradigm_fragment(&self) -> ParadigmFragment {
        ParadigmFragment {
            paradigm: self.paradigm,
            student: self.student.clone(),
            q_model: self.q_model.clone(),
            sk_episodes: self.sk_episodes,
        }
    }
}

#[derive(serde::Serialize)]
struct ParadigmFragment {
    paradigm: Paradigm,
    student: Option<crate::nn::MlpConfig>,
    q_model: Option<adaptation::QModelConfig>,
    sk_episodes: usize,
}

/// Aggregated output of `report`.
#[derive(Clone, Debug)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
}

/// Aggregates every run recorded in `run_dir` into
/// `report/<method>.csv` (median and quartiles per evaluation point) and
/// `report/summary.csv` (final returns, plus each source applied directly).
pub fn report(run_dir: &Path) -> Result<Report> {
    let mut m = Manifest::load(run_dir)?;
    let mut summary = Vec::new();
    let runs: Vec<(Method, String)> = m
        .artifacts
        .iter()
        .filter_map(|a| {
            let rest = a.path.strip_prefix("runs/")?;
            let (method, file) = rest.split_once('/')?;
            file.strip_suffix(".csv")?;
            Some((Method::parse(method).ok()?, a.path.clone()))
        })
        .collect();
    for method in Method::ALL {
        let mut files: Vec<&String> = runs
            .iter()
            .filter(|(mm, _)| *mm == method)
            .map(|(_, p)| p)
            .collect();
        if files.is_empty() {
            continue;
        }
        files.sort_by_key(|p| seed_of(p));
        if method == Method::Sk {
            let mut by_source: Vec<(String, Vec<f64>)> = Vec::new();
            for f in &files {
                for row in results::sk_from_csv(&m.read_verified(run_dir, f)?, f)? {
                    match by_source.iter_mut().find(|(s, _)| *s == row.source) {
                        Some((_, v)) => v.push(row.mean_return),
                        None => by_source.push((row.source, vec![row.mean_return])),
                    }
                }
            }
            for (source, finals) in by_source {
                summary.push(report::summarize(&format!("sk:{source}"), &finals)?);
            }
            continue;
        }
        let curves = files
            .iter()
            .map(|f| results::curve_from_csv(&m.read_verified(run_dir, f)?, f))
            .collect::<Result<Vec<_>>>()?;
        let agg = report::aggregate_curves(&curves)?;
        m.record(
            run_dir,
            &format!("report/{}.csv", method.name()),
            &results::aggregate_to_csv(&agg),
            None,
        )?;
        let finals: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.last())
            .map(|p| p.mean_return)
            .collect();
        summary.push(report::summarize(method.name(), &finals)?);
    }
    if summary.is_empty() {
        return Err(Error::Data(format!(
            "no runs recorded in {}",
            run_dir.display()
        )));
    }
    m.record(
        run_dir,
        "report/summary.csv",
        &results::summary_to_csv(&summary),
        None,
    )?;
    m.save(run_dir)?;
    Ok(Report { summary })
}

fn seed_of(path: &str) -> u64 {
    path.rsplit_once("seed-")
        .and_then(|(_, s)| s.strip_suffix(".csv"))
        .and_then(|s| s.parse().ok())
        .unwrap_or(u64::MAX)
}
