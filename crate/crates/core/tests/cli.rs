//! End-to-end runs of the `carol` binary on a small policy experiment.

use std::path::Path;
use std::process::{Command, Output};

use carol_kit::harness::results::{curve_from_csv, similarity_from_csv, summary_from_csv};

const GRID: &str = "kind = \"grid_slip\", width = 3, height = 3";

fn config(experiment_id: &str, n_sources: usize, extra: &str) -> String {
    let mut text = format!(
        "experiment_id = \"{experiment_id}\"\n\
         paradigm = \"policy\"\n\
         seeds = [0, 1]\n\
         methods = [\"carol\", \"pd\", \"sk\"]\n\
         {extra}\n"
    );
    for (i, p) in [0.0, 0.2, 0.5].iter().take(n_sources).enumerate() {
        text += &format!(
            "[[sources]]\nname = \"s{i}\"\nseed = {}\nepisode_cap = 20\nenv = {{ {GRID}, slip_p = {p} }}\n\n",
            10 + i
        );
    }
    text += &format!(
        "[target]\nname = \"t\"\nseed = 50\nepisode_cap = 20\nenv = {{ {GRID}, slip_p = 0.2 }}\n\n\
         [source_training]\nalgorithm = \"value_iteration\"\ngamma = 0.9\n\n\
         [context]\nsamples = 300\nprobe_samples = 200\n\
         fit = {{ net = {{ hidden = [8] }}, epochs = 3, lr = 0.01, seed = 0 }}\n\n\
         [adapt]\niterations = 4\nlr = 0.05\ngamma = 0.9\nminibatch_size = 8\n\
         rollout_episodes_per_iter = 2\noptimizer = \"sgd\"\neval_episodes = 3\nseed = 0\n\n\
         [student]\nhidden = [8]\n"
    );
    text
}

fn carol(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carol"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = carol(args, cwd);
    assert!(
        out.status.success(),
        "carol {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn files_in(dir: &Path, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .map(|d| {
            d.filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == ext)
            })
            .count()
        })
        .unwrap_or(0)
}

#[test]
fn train_sources_writes_knowledge_and_models() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "exp.toml", &config("three", 3, ""));
    ok(&["train-sources", "exp.toml", "--out", "run"], dir.path());
    let sources = dir.path().join("run/sources");
    assert_eq!(files_in(&sources, "knowledge"), 3);
    assert_eq!(files_in(&sources, "model"), 3);
    let manifest = std::fs::read(dir.path().join("run/manifest.toml")).unwrap();
    let again = ok(
        &["train-sources", "--config", "exp.toml", "--out", "run"],
        dir.path(),
    );
    assert!(again.contains("artifacts recorded"));
    assert_eq!(
        std::fs::read(dir.path().join("run/manifest.toml")).unwrap(),
        manifest
    );
}

#[test]
fn similarity_rows_are_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "three.toml", &config("three", 3, ""));
    write(dir.path(), "one.toml", &config("one", 1, ""));
    ok(&["similarity", "three.toml", "--out", "a"], dir.path());
    ok(&["similarity", "one.toml", "--out", "b"], dir.path());
    let rows = similarity_from_csv(
        &std::fs::read(dir.path().join("a/similarity.csv")).unwrap(),
        "a",
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert!((rows.iter().map(|r| r.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    let single = similarity_from_csv(
        &std::fs::read(dir.path().join("b/similarity.csv")).unwrap(),
        "b",
    )
    .unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].weight, 1.0);
}

#[test]
fn adapt_writes_one_curve_per_seed_and_method_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "exp.toml", &config("three", 3, ""));
    let first = ok(
        &["adapt", "exp.toml", "--out", "run", "--seeds", "0,1,2"],
        dir.path(),
    );
    assert!(first.contains("carol seed 2: done"));
    for method in ["carol", "pd", "sk"] {
        assert_eq!(
            files_in(&dir.path().join("run/runs").join(method), "csv"),
            3,
            "{method}"
        );
    }
    let snapshot = |p: &Path| std::fs::read(p.join("run/runs/carol/seed-1.csv")).unwrap();
    let before = snapshot(dir.path());
    let second = ok(
        &["adapt", "exp.toml", "--out", "run", "--seeds", "0,1,2"],
        dir.path(),
    );
    assert!(!second.contains("done"), "rerun did work: {second}");
    assert_eq!(second.matches("up to date").count(), 9);
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn pd_equals_carol_under_a_uniform_override() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "w.toml",
        &format!("weights = [{0}, {0}, {0}]\n", 1.0 / 3.0),
    );
    write(
        dir.path(),
        "exp.toml",
        &config("override", 3, "weights_override = \"w.toml\""),
    );
    ok(
        &["adapt", "exp.toml", "--out", "run", "--seeds", "0,3"],
        dir.path(),
    );
    for seed in [0, 3] {
        let read = |m: &str| {
            std::fs::read(dir.path().join(format!("run/runs/{m}/seed-{seed}.csv"))).unwrap()
        };
        assert_eq!(read("carol"), read("pd"), "seed {seed}");
    }
}

#[test]
fn tampered_artifact_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "exp.toml", &config("three", 3, ""));
    ok(
        &[
            "adapt", "exp.toml", "--out", "run", "--seeds", "0", "--method", "carol",
        ],
        dir.path(),
    );
    let k = dir.path().join("run/sources/s1.knowledge");
    let mut bytes = std::fs::read(&k).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&k, bytes).unwrap();
    let out = carol(
        &[
            "adapt", "exp.toml", "--out", "run", "--seeds", "0", "--method", "carol",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error kind=digest "), "{err}");
    assert!(err.contains("s1.knowledge"));
}

#[test]
fn report_aggregates_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "exp.toml", &config("three", 3, ""));
    ok(
        &["adapt", "exp.toml", "--out", "one", "--seeds", "4"],
        dir.path(),
    );
    ok(&["report", "one"], dir.path());
    let curve = curve_from_csv(
        &std::fs::read(dir.path().join("one/runs/carol/seed-4.csv")).unwrap(),
        "c",
    )
    .unwrap();
    let agg = std::fs::read_to_string(dir.path().join("one/report/carol.csv")).unwrap();
    let medians: Vec<f64> = agg
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(
        medians,
        curve.iter().map(|p| p.mean_return).collect::<Vec<_>>()
    );

    let summary_path = dir.path().join("one/report/summary.csv");
    let summary = summary_from_csv(&std::fs::read(&summary_path).unwrap(), "s").unwrap();
    let entries: Vec<&str> = summary.iter().map(|r| r.entry.as_str()).collect();
    assert_eq!(entries, ["carol", "pd", "sk:s0", "sk:s1", "sk:s2"]);
    let first = std::fs::read(&summary_path).unwrap();
    let printed = ok(&["report", "--out", "one"], dir.path());
    assert_eq!(std::fs::read(&summary_path).unwrap(), first);
    assert_eq!(printed, ok(&["report", "one"], dir.path()));
}

#[test]
fn missing_env_parameter_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let text = config("three", 3, "").replacen(", slip_p = 0.2 }", " }", 1);
    write(dir.path(), "exp.toml", &text);
    let out = carol(&["train-sources", "exp.toml", "--out", "run"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error kind=config "), "{err}");
    assert!(err.contains("slip_p"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "exp.toml",
        &config("three", 3, "iterationz = 3"),
    );
    let out = carol(&["adapt", "exp.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("iterationz"));
}
