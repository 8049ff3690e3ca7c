use debias_cli::config::{parse_override, RunConfig};
use debias_core::ablation::ExperimentLabel;
use debias_core::pruner::Rounds;

#[test]
fn defaults_round_trip_through_toml() {
    let cfg = RunConfig::default().finalize().unwrap();
    let dir = tempfile::tempdir().unwrap();
    cfg.snapshot(dir.path()).unwrap();
    let back = RunConfig::load(Some(&dir.path().join("config.toml")), &[]).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "seed = 5\nexperiment = \"C\"\n[schedule.phase1]\nepochs = 3\n[prune]\nrounds = { count = 4 }\n").unwrap();
    let ov = vec![parse_override("schedule.phase1.epochs=7").unwrap(), parse_override("out=elsewhere").unwrap()];
    let cfg = RunConfig::load(Some(&path), &ov).unwrap().finalize().unwrap();
    assert_eq!(cfg.experiment, ExperimentLabel::C);
    assert_eq!(cfg.schedule.phase1.epochs, 7);
    assert_eq!(cfg.schedule.phase1.learning_rate, 5e-4);
    assert_eq!(cfg.prune.rounds, Rounds::Count(4));
    assert_eq!(cfg.out.to_str(), Some("elsewhere"));
    assert_eq!((cfg.classifier.seed, cfg.segmentation.seed, cfg.prune.seed), (5, 5, 5));
}

#[test]
fn invalid_values_are_rejected() {
    let bad = |k: &str| RunConfig::load(None, &[parse_override(k).unwrap()]).and_then(|c| Ok(c.finalize()?));
    assert!(bad("pipeline.qc_ratio=0").is_err());
    assert!(bad("pipeline.closing_kernel=0").is_err());
    assert!(bad("classifier.backbone=\"alexnet\"").is_err());
    assert!(bad("schedule.phase2.learning_rate=0.01").is_err());
    assert!(bad("schedule.input_size=64").is_err());
    assert!(bad("classifier.nonsense=1").is_err());
    assert!(bad("experiment=\"Z\"").is_err());
    assert!(parse_override("novalue").is_err());
}
