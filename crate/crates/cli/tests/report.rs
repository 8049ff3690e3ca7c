use std::collections::BTreeMap;

use debias_cli::report::{render_auc_curve, render_scatter, report_pruned_records};
use debias_core::ablation::{ExternalRow, ExternalTestResult};
use debias_core::corpus::{DatasetManifest, ImageRecord, Label, Source, Subtlety};
use debias_core::pruner::{PruneLog, RoundMetrics};

fn log(series: &[f64]) -> PruneLog {
    let rounds = series
        .iter()
        .enumerate()
        .map(|(r, &m)| RoundMetrics {
            round: r,
            pruned_id: r.checked_sub(1).map(|i| format!("n{i}")),
            fold_aucs: vec![m; 4],
            auc_mean: m,
            auc_std: 0.01,
            misclassified: BTreeMap::new(),
        })
        .collect();
    PruneLog {
        rounds,
        prune_list: (0..series.len().saturating_sub(1)).map(|i| format!("n{i}")).collect(),
        config: serde_json::json!({}),
        seed: 0,
    }
}

fn count(svg: &str, class: &str) -> usize {
    svg.matches(&format!("class=\"{class}\"")).count()
}

#[test]
fn auc_curve_marks_the_stable_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("figures/auc.svg");
    render_auc_curve(&log(&[0.7, 0.85, 0.9]), 0.8, &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(count(&svg, "stable"), 1);
    assert!(svg.contains("stable at 1"));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    let stable: Vec<&str> = csv.lines().skip(1).filter(|l| l.ends_with("true")).collect();
    assert_eq!(stable, vec!["1,0.85,0.01,0.8,true"]);
}

#[test]
fn auc_curve_x_axis_and_degenerate_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("auc.svg");
    let series: Vec<f64> = (0..62).map(|i| 0.6 + 0.005 * i as f64).collect();
    render_auc_curve(&log(&series), 0.8, &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(count(&svg, "point"), 62);
    assert!(svg.contains(">61<"));
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap().split(',').next(), Some("61"));

    render_auc_curve(&log(&[0.6]), 0.8, &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(count(&svg, "point"), 1);
    assert_eq!(count(&svg, "stable"), 0);

    assert!(render_auc_curve(&log(&[]), 0.8, &out).is_err());
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert!(render_auc_curve(&log(&[0.9]), 0.8, &blocker.join("x.svg")).is_err());
}

fn ext(probs: &[Option<f64>]) -> ExternalTestResult {
    let rows = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| ExternalRow {
            id: format!("x{i}"),
            label: Label::Nodule,
            probability: p,
            exclusion_reason: p.is_none().then_some(debias_core::lungseg::QcReason::TooFewContours),
        })
        .collect();
    ExternalTestResult::from_rows(rows).unwrap()
}

#[test]
fn scatter_has_one_marker_per_included_image() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scatter.svg");
    let mut probs: Vec<Option<f64>> = (0..276).map(|i| Some((i % 100) as f64 / 99.0)).collect();
    probs.extend([None; 4]);
    let res = ext(&probs);
    render_scatter(&res, &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(count(&svg, "point"), 276);
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    let above = csv.lines().skip(1).filter(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() > 0.5).count();
    let acc = above as f64 / 276.0;
    assert!(svg.contains(&format!("accuracy {acc:.3}")));

    render_scatter(&ext(&[Some(1.0); 5]), &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    // y of the 0.5 line versus every point: points sit above it (smaller y)
    let line_y: f64 = svg.split("class=\"ref\"").nth(1).unwrap().split("y1=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
    for part in svg.split("class=\"point\"").skip(1) {
        let cy: f64 = part.split("cy=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
        assert!(cy < line_y);
    }
}

#[test]
fn pruned_record_table() {
    let rec = ImageRecord {
        id: "n0".into(),
        source: Source::Jsrt,
        path: "n0.png".into(),
        label: Label::Nodule,
        subtlety: Some(Subtlety::ExtremelySubtle),
        nodule_center: Some((1520, 1364)),
        nodule_size_mm: Some(14.0),
        patient_id: "n0".into(),
    };
    let m = DatasetManifest::new(vec![rec]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("records.csv");
    let l = log(&[0.5, 0.6]);
    report_pruned_records(&l, &m, 1, &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"Extremely Subtle 14 mm (1520,1364)\""), "{text}");
    report_pruned_records(&l, &m, 0, &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1);
    assert!(report_pruned_records(&l, &m, 2, &out).is_err());
}
