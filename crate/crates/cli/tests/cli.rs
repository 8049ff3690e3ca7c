use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use debias_core::corpus::{load_manifest, DatasetManifest, Label};

const TINY: &str = r#"
[segmentation]
epochs = 2
batch_size = 4
[segmentation.arch]
input_size = 32
depth = 2
base_width = 4

[ribsup]
epochs = 2
input_size = 32
[ribsup.arch]
depth = 2
width = 4
kernel = 3

[classifier]
width_divisor = 16
input_size = 32
[classifier.head]
hidden = 8

[schedule]
batch_size = 8
input_size = 32
[schedule.phase1]
epochs = 2
[schedule.phase2]
epochs = 1
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxr-debias")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&[]).status.code(), Some(2));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["phantom", "--n", "2", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["phantom", "--n", "2", "--out", s(dir.path()), "--set", "pipeline.qc_ratio=2.0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["phantom", "--n", "2", "--out", s(dir.path()), "--set", "nonsense.key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(cli(&["split", "--manifest", s(&missing), "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn phantom_corpora_are_byte_identical_and_guarded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&["phantom", "--n", "5", "--confounder", "correlated", "--seed", "7", "--out", s(d.path())]);
    }
    // the snapshot records the output path; everything else must match
    let strip = |d: &Path| {
        files(d)
            .into_iter()
            .map(|(p, bytes)| {
                if p == Path::new("config.toml") {
                    let text = String::from_utf8(bytes).unwrap();
                    (p, text.lines().filter(|l| !l.starts_with("out = ")).collect::<Vec<_>>().join("\n").into_bytes())
                } else {
                    (p, bytes)
                }
            })
            .collect::<Vec<_>>()
    };
    let (fa, fb) = (strip(a.path()), strip(b.path()));
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 30);
    for (x, y) in fa.iter().zip(&fb) {
        assert!(x == y, "{} differs", x.0.display());
    }
    let again = cli(&["phantom", "--n", "5", "--seed", "7", "--out", s(a.path())]);
    assert_eq!(again.status.code(), Some(2));
    ok(&["phantom", "--n", "5", "--seed", "7", "--out", s(a.path()), "--force"]);
}

#[test]
fn end_to_end_on_a_tiny_corpus() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let cfg = r.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = r.join("corpus");
    let ext = r.join("external");
    ok(&["phantom", "--n", "10", "--confounder", "correlated", "--seed", "1", "--out", s(&corpus)]);
    ok(&["phantom", "--n", "4", "--confounder", "anticorrelated", "--seed", "2", "--out", s(&ext)]);

    // drop two controls so pruning has a surplus to remove
    let full = load_manifest(&corpus.join("manifest.csv")).unwrap();
    let mut controls = full.records().iter().filter(|r| r.label == Label::NonNodule);
    let drop: std::collections::HashSet<&str> = [controls.next().unwrap().id.as_str(), controls.next().unwrap().id.as_str()].into();
    let unbalanced = corpus.join("unbalanced.csv");
    full.without(&drop).write_csv(&unbalanced).unwrap();

    ok(&["split", "--manifest", s(&unbalanced), "--out", s(&r.join("split")), "--seed", "3"]);
    assert!(r.join("split/folds.csv").exists());

    let seg = r.join("seg");
    let supp = r.join("supp");
    ok(&["train-seg", "--corpus", s(&corpus), "--config", s(&cfg), "--out", s(&seg)]);
    ok(&["train-ribsup", "--corpus", s(&corpus), "--config", s(&cfg), "--out", s(&supp)]);
    assert!(seg.join("model.safetensors").exists() && supp.join("history.csv").exists());

    let runs = r.join("runs");
    let common = ["--config", s(&cfg), "--out", s(&runs), "--run-id", "t"];
    let pre = ok(&[&["preprocess", "--manifest", s(&unbalanced), "--experiment", "F", "--seg-model", s(&seg), "--supp-model", s(&supp)][..], &common].concat());
    let pre_dir = PathBuf::from(String::from_utf8_lossy(&pre.stdout).trim());
    let prepared = load_manifest(&pre_dir.join("manifest.csv")).unwrap();
    assert_eq!(prepared.len(), 18);

    ok(&[&["prune", "--manifest", s(&unbalanced), "--experiment", "A", "--rounds", "to_balance"][..], &common].concat());
    let run = runs.join("A/t");
    let list = std::fs::read_to_string(run.join("prune_list.txt")).unwrap();
    assert_eq!(list.lines().count(), 2);
    assert_eq!(std::fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 4);
    assert!(run.join("config.toml").exists());

    ok(&[&["train-master", "--manifest", s(&unbalanced), "--experiment", "A"][..], &common].concat());
    assert_eq!(std::fs::read_to_string(run.join("master_history.csv")).unwrap().lines().count(), 4);
    ok(&[&["external-test", "--manifest", s(&ext.join("manifest.csv")), "--experiment", "A"][..], &common].concat());
    let ext_csv = std::fs::read_to_string(run.join("external.csv")).unwrap();
    assert_eq!(ext_csv.lines().count(), 9);
    assert!(run.join("summary.json").exists());
    let again = cli(&[&["external-test", "--manifest", s(&ext.join("manifest.csv")), "--experiment", "A"][..], &common].concat());
    assert_eq!(again.status.code(), Some(2));

    ok(&["report", "--run-dir", s(&run), "--manifest", s(&unbalanced), "--top-n", "2"]);
    for f in ["auc_curve.svg", "auc_curve.csv", "external_scatter.svg", "external_scatter.csv", "pruned_records.csv"] {
        assert!(run.join("figures").join(f).exists(), "{f}");
    }
    let records = std::fs::read_to_string(run.join("figures/pruned_records.csv")).unwrap();
    assert_eq!(records.lines().count(), 3);
    assert_eq!(cli(&["report", "--run-dir", s(&run)]).status.code(), Some(2));
    ok(&["report", "--run-dir", s(&run), "--force"]);
    let _: DatasetManifest = prepared;
}
