use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_GAUSS: &[&str] = &["--set", "iterations=40", "--set", "hidden_dims=16,16", "--set", "batch_size=32"];
const TINY_STYLE: &[&str] = &[
    "--set",
    "iterations=6",
    "--set",
    "corpus_size=1000",
    "--set",
    "hidden_dims=16",
    "--set",
    "embed_dim=8",
    "--set",
    "hidden_dim=12",
    "--set",
    "latent_dim=4",
    "--set",
    "batch_size=4",
    "--set",
    "n_samples=20",
];

fn rectiflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rectiflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rectiflow(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

/// CSV text with the named column removed.
fn without_column(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == column).unwrap();
    let keep = |line: &str| line.split(',').enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v).collect::<Vec<_>>().join(",");
    std::iter::once(keep(&header.join(","))).chain(lines.map(keep)).collect::<Vec<_>>().join("\n")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    names
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&with(&["train", "--task", "gauss2d", "--seed", "7", "--out", dir.to_str().unwrap()], TINY_GAUSS));
    }
    let read = |d: &Path| without_column(&fs::read_to_string(d.join("metrics.csv")).unwrap(), "wall_ms");
    assert_eq!(read(&a), read(&b));
    assert_eq!(fs::read(a.join("checkpoint.lfv")).unwrap(), fs::read(b.join("checkpoint.lfv")).unwrap());
    assert_eq!(read(&a).lines().count(), 41);

    let (c, d) = (tmp.path().join("c"), tmp.path().join("d"));
    for dir in [&c, &d] {
        ok(&with(&["train", "--task", "style_transfer", "--seed", "3", "--out", dir.to_str().unwrap()], TINY_STYLE));
        ok(&["eval", "--out", dir.to_str().unwrap()]);
    }
    assert_eq!(read(&c), read(&d));
    assert_eq!(fs::read(c.join("corpus_hash.txt")).unwrap(), fs::read(d.join("corpus_hash.txt")).unwrap());
    assert_eq!(fs::read(c.join("eval.csv")).unwrap(), fs::read(d.join("eval.csv")).unwrap());
}

#[test]
fn resumed_run_matches_a_straight_one() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = tmp.path().join("straight");
    let split = tmp.path().join("split");
    let tiny = ["--set", "hidden_dims=16,16", "--set", "batch_size=32"];
    ok(&with(&["train", "--task", "gauss2d", "--set", "iterations=40", "--out", straight.to_str().unwrap()], &tiny));
    ok(&with(&["train", "--task", "gauss2d", "--set", "iterations=20", "--out", split.to_str().unwrap()], &tiny));
    let ck = split.join("checkpoint.lfv");
    ok(&["train", "--resume", ck.to_str().unwrap(), "--set", "iterations=40", "--out", split.to_str().unwrap()]);
    let read = |d: &Path| without_column(&fs::read_to_string(d.join("metrics.csv")).unwrap(), "wall_ms");
    assert_eq!(read(&straight), read(&split));
    assert_eq!(fs::read(straight.join("checkpoint.lfv")).unwrap(), fs::read(ck).unwrap());
}

#[test]
fn unknown_flag_exits_2_without_touching_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = rectiflow(&["train", "--task", "gauss2d", "--bogus", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());

    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let res = rectiflow(&["sample", "--frobnicate", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(listing(&out), vec!["keep.txt"]);
}

#[test]
fn missing_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = rectiflow(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing config"));
    assert!(!out.exists());

    let res = rectiflow(&["train", "--config", tmp.path().join("nope.cfg").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let res = rectiflow(&["eval", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_and_overrides_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# tiny\ntask = gauss2d\niterations = 5\nhidden_dims = 8\nbatch_size = 16\n").unwrap();
    let out = tmp.path().join("run");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--set", "iterations=3", "--out", out.to_str().unwrap()]);
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("iterations = 3") || echo.contains("iterations=3"), "{echo}");
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 4);
}

#[test]
fn sweep_steps_then_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let dir = out.to_str().unwrap();
    ok(&with(&["train", "--task", "gauss2d", "--out", dir], TINY_GAUSS));
    ok(&["sweep-steps", "--out", dir, "--n", "4000"]);
    let sweep = fs::read_to_string(out.join("sweep_steps.csv")).unwrap();
    let mut lines = sweep.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 7);
    let wi = header.iter().position(|h| *h == "wall_ms").unwrap();
    let walls: Vec<f64> = rows.iter().map(|r| r[wi].parse().unwrap()).collect();
    assert!(walls.windows(2).all(|w| w[1] >= w[0]), "{walls:?}");

    let first = ok(&["plot-data", "--out", dir]);
    let plots = out.join("plots");
    let snapshot: Vec<Vec<u8>> = listing(&plots).iter().map(|n| fs::read(plots.join(n)).unwrap()).collect();
    assert_eq!(ok(&["plot-data", "--out", dir]), first);
    let again: Vec<Vec<u8>> = listing(&plots).iter().map(|n| fs::read(plots.join(n)).unwrap()).collect();
    assert_eq!(snapshot, again);

    let count = |name: &str| fs::read_to_string(plots.join(name)).unwrap().lines().count() - 1;
    assert_eq!(count("loss_l_flow.csv"), 40);
    let metrics = header.len() - 2;
    assert_eq!(count("steps_vs_quality.csv"), 7 * metrics);
    assert_eq!(count("steps_vs_wall_ms.csv"), 7);
    assert!(fs::read_to_string(plots.join("loss_lambda.csv")).unwrap().starts_with("x,series,value\n"));
}

#[test]
fn style_ablations_emit_one_row_per_arm() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let dir = out.to_str().unwrap();
    ok(&with(&["sweep-lambda", "--task", "style_transfer", "--out", dir], TINY_STYLE));
    ok(&with(&["compare-training", "--task", "style_transfer", "--set", "flow_iterations=3", "--out", dir], TINY_STYLE));

    let sweep = fs::read_to_string(out.join("sweep_lambda.csv")).unwrap();
    let modes: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["lexico", "fixed_lambda:0.1", "fixed_lambda:1", "fixed_lambda:2"]);
    assert!(sweep.lines().next().unwrap().contains("style_accuracy"));

    let compare = fs::read_to_string(out.join("compare_training.csv")).unwrap();
    let header: Vec<&str> = compare.lines().next().unwrap().split(',').collect();
    let ti = header.iter().position(|h| *h == "total_iterations").unwrap();
    let arms: Vec<(String, String)> = compare
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[ti].to_string())
        })
        .collect();
    assert_eq!(arms, [("joint".to_string(), "6".to_string()), ("separate".to_string(), "9".to_string())]);

    ok(&["plot-data", "--out", dir]);
    assert!(out.join("plots/lambda_mode_vs_metrics.csv").exists());
    assert!(out.join("plots/training_mode_vs_metrics.csv").exists());
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let res = rectiflow(&with(&["train", "--task", "gauss2d", "--out", out.to_str().unwrap()], TINY_GAUSS));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("locked"));
    assert_eq!(listing(&out), vec![".lock"]);
}

#[test]
fn failed_run_is_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "mine").unwrap();
    let args = with(&["train", "--task", "gauss2d", "--set", "divergence_threshold=1e-9", "--out", out.to_str().unwrap()], TINY_GAUSS);
    let res = rectiflow(&args);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert_eq!(listing(&out), vec!["failed", "notes.txt"]);
    assert!(out.join("failed/attempt-1/config.txt").exists());

    assert_eq!(rectiflow(&args).status.code(), Some(1));
    assert!(out.join("failed/attempt-2").is_dir());
}

#[test]
fn samples_are_written_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let dir = out.to_str().unwrap();
    ok(&with(&["train", "--task", "style_transfer", "--out", dir], TINY_STYLE));
    ok(&["sample", "--out", dir, "--n", "5", "--steps", "3", "--seed", "11"]);
    let first = fs::read(out.join("samples.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 5);
    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 5 * 4);
    ok(&["sample", "--out", dir, "--n", "5", "--steps", "3", "--seed", "11"]);
    assert_eq!(fs::read(out.join("samples.txt")).unwrap(), first);
    ok(&["sample", "--out", dir, "--n", "5", "--steps", "3", "--direction", "backward"]);
    assert_eq!(rectiflow(&["sample", "--out", dir, "--steps", "0"]).status.code(), Some(2));
    assert_eq!(rectiflow(&["sample", "--out", dir, "--direction", "sideways"]).status.code(), Some(2));
}

#[test]
fn gen_corpus_writes_corpus_vocab_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus");
    let dir = out.to_str().unwrap();
    ok(&["gen-corpus", "--task", "length_control", "--set", "corpus_size=300", "--out", dir]);
    assert_eq!(listing(&out), vec!["config.txt", "corpus.tsv", "corpus_hash.txt", "vocab.txt"]);
    let hash = fs::read_to_string(out.join("corpus_hash.txt")).unwrap();
    assert_eq!(hash.trim().len(), 64);
    assert_eq!(fs::read_to_string(out.join("corpus.tsv")).unwrap().lines().count(), 1 + 300);
    let other = tmp.path().join("again");
    ok(&["gen-corpus", "--task", "length_control", "--set", "corpus_size=300", "--out", other.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(other.join("corpus_hash.txt")).unwrap(), hash);
}
