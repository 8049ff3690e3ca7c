//! Evolutionary pruning: train k fold models, score every remaining nodule
//! image with each of them, drop the most-misclassified one, repeat.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_kfold, DatasetManifest, FoldAssignment, ImageRecord, Label};
use crate::error::{CoreError, Result};
use crate::metrics::{auc, mean_std};

/// Score at or below which a model counts a nodule image as misclassified.
pub const THRESHOLD: f64 = 0.5;

/// Trains one model per fold and scores images with it. Implemented by the
/// real classifier harness and by test mocks.
pub trait FoldTrainer {
    type Model;

    /// `warm` carries the same fold's model from the previous round when
    /// warm-starting is enabled.
    fn train(
        &mut self,
        fold: usize,
        train: &[&ImageRecord],
        val: &[&ImageRecord],
        warm: Option<Self::Model>,
    ) -> Result<Self::Model>;

    fn score(&self, model: &Self::Model, rec: &ImageRecord) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassRow {
    pub count: usize,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Id removed just before this round (none for round 0).
    pub pruned_id: Option<String>,
    pub fold_aucs: Vec<f64>,
    pub auc_mean: f64,
    pub auc_std: f64,
    /// Every remaining nodule image.
    pub misclassified: BTreeMap<String, MisclassRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounds {
    Count(usize),
    /// Prune until both classes have the same size.
    ToBalance,
}

impl std::str::FromStr for Rounds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "to_balance" => Ok(Self::ToBalance),
            n => n.parse().map(Self::Count).map_err(|_| format!("rounds must be a count or `to_balance`, got `{n}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneOptions {
    pub rounds: Rounds,
    /// Re-draw the folds from the remaining images at every round.
    pub resplit_each_round: bool,
    /// Continue from the previous round's fold models instead of retraining.
    pub warm_start: bool,
    pub k: usize,
    pub seed: u64,
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            rounds: Rounds::ToBalance,
            resplit_each_round: false,
            warm_start: false,
            k: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub rounds: Vec<RoundMetrics>,
    pub prune_list: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
}

/// Highest count, then lowest mean score, then smallest id.
pub fn select_prune_candidate(counts: &BTreeMap<String, usize>, scores: &BTreeMap<String, f64>) -> Result<String> {
    let mut best: Option<(&String, usize, f64)> = None;
    for (id, &count) in counts {
        let score = scores.get(id).copied().unwrap_or(f64::INFINITY);
        let better = match best {
            None => true,
            Some((bid, bc, bs)) => {
                count > bc || (count == bc && (score < bs || (score == bs && id < bid)))
            }
        };
        if better {
            best = Some((id, count, score));
        }
    }
    best.map(|b| b.0.clone()).ok_or_else(|| CoreError::arg("no prune candidates"))
}

fn check_round_inputs(manifest: &DatasetManifest, folds: &FoldAssignment, prune_list: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in prune_list {
        let rec = manifest
            .get(id)
            .ok_or_else(|| CoreError::arg(format!("pruned id `{id}` is not in the manifest")))?;
        if rec.label != Label::Nodule {
            return Err(CoreError::arg(format!("pruned id `{id}` is not a nodule image")));
        }
        if !seen.insert(id.as_str()) {
            return Err(CoreError::arg(format!("`{id}` appears twice in the prune list")));
        }
    }
    let counts = manifest.class_counts();
    if counts.nodule - prune_list.len() < counts.non_nodule {
        return Err(CoreError::arg("pruning would leave fewer nodule than non-nodule images"));
    }
    for rec in manifest.records() {
        if folds.fold_of(&rec.id).is_none_or(|f| f >= folds.k) {
            return Err(CoreError::arg(format!("`{}` has no fold assignment", rec.id)));
        }
    }
    Ok(())
}

/// One round: trains `k` fold models with `prune_list` excluded and tabulates
/// per-fold AUC and per-image misclassification counts.
pub fn run_prune_round<F: FoldTrainer>(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    prune_list: &[String],
    trainer: &mut F,
) -> Result<RoundMetrics> {
    Ok(round_with_models(manifest, folds, prune_list, trainer, Vec::new(), prune_list.len())?.0)
}

fn round_with_models<F: FoldTrainer>(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    prune_list: &[String],
    trainer: &mut F,
    mut warm: Vec<Option<F::Model>>,
    round: usize,
) -> Result<(RoundMetrics, Vec<F::Model>)> {
    check_round_inputs(manifest, folds, prune_list)?;
    let pruned: HashSet<&str> = prune_list.iter().map(String::as_str).collect();
    let remaining: Vec<&ImageRecord> = manifest.records().iter().filter(|r| !pruned.contains(r.id.as_str())).collect();
    warm.resize_with(folds.k, || None);

    let mut models = Vec::with_capacity(folds.k);
    let mut fold_aucs = Vec::with_capacity(folds.k);
    for (fold, prev) in warm.into_iter().enumerate() {
        let (val, train): (Vec<&ImageRecord>, Vec<&ImageRecord>) =
            remaining.iter().partition(|r| folds.fold_of(&r.id) == Some(fold));
        let model = trainer.train(fold, &train, &val, prev)?;
        let scored = val
            .iter()
            .map(|r| Ok((trainer.score(&model, r)?, r.label.is_nodule())))
            .collect::<Result<Vec<_>>>()?;
        fold_aucs.push(auc(&scored)?);
        models.push(model);
    }

    let mut misclassified = BTreeMap::new();
    for rec in remaining.iter().filter(|r| r.label.is_nodule()) {
        let scores = models.iter().map(|m| trainer.score(m, rec)).collect::<Result<Vec<_>>>()?;
        misclassified.insert(
            rec.id.clone(),
            MisclassRow {
                count: scores.iter().filter(|&&s| s <= THRESHOLD).count(),
                mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            },
        );
    }
    let (auc_mean, auc_std) = mean_std(&fold_aucs);
    let metrics = RoundMetrics {
        round,
        pruned_id: round.checked_sub(1).map(|r| prune_list[r].clone()),
        fold_aucs,
        auc_mean,
        auc_std,
        misclassified,
    };
    Ok((metrics, models))
}

/// Runs rounds `0..=n`, pruning one nodule image between consecutive rounds.
pub fn evolutionary_prune<F: FoldTrainer>(
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    trainer: &mut F,
    opts: &PruneOptions,
) -> Result<PruneLog> {
    let counts = manifest.class_counts();
    let surplus = counts.nodule.checked_sub(counts.non_nodule).ok_or_else(|| {
        CoreError::arg(format!(
            "{} nodule images is fewer than {} non-nodule images",
            counts.nodule, counts.non_nodule
        ))
    })?;
    let n = match opts.rounds {
        Rounds::ToBalance => surplus,
        Rounds::Count(n) if n <= surplus => n,
        Rounds::Count(n) => {
            return Err(CoreError::arg(format!("{n} rounds exceeds the class surplus of {surplus}")));
        }
    };
    let mut prune_list: Vec<String> = Vec::with_capacity(n);
    let mut rounds = Vec::with_capacity(n + 1);
    let mut folds = folds.clone();
    let mut previous: Vec<F::Model> = Vec::new();
    for r in 0..=n {
        if opts.resplit_each_round && r > 0 {
            let pruned: HashSet<&str> = prune_list.iter().map(String::as_str).collect();
            let mut fresh = stratified_kfold(&manifest.without(&pruned), opts.k, opts.seed.wrapping_add(r as u64))?;
            for id in &prune_list {
                fresh.assignment.insert(id.clone(), 0);
            }
            folds = fresh;
        }
        let warm = if opts.warm_start {
            previous.drain(..).map(Some).collect()
        } else {
            Vec::new()
        };
        let (metrics, models) = round_with_models(manifest, &folds, &prune_list, trainer, warm, r)?;
        info!("prune round {r}: mean auc {:.4} +/- {:.4}", metrics.auc_mean, metrics.auc_std);
        if r < n {
            let counts = metrics.misclassified.iter().map(|(id, m)| (id.clone(), m.count)).collect();
            let scores = metrics.misclassified.iter().map(|(id, m)| (id.clone(), m.mean_score)).collect();
            prune_list.push(select_prune_candidate(&counts, &scores)?);
        }
        rounds.push(metrics);
        if opts.warm_start {
            previous = models;
        }
    }
    Ok(PruneLog {
        rounds,
        prune_list,
        config: serde_json::to_value(opts)?,
        seed: opts.seed,
    })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const PRUNE_LIST_FILE: &str = "prune_list.txt";
pub const MISCLASS_DIR: &str = "misclassification";

impl PruneLog {
    pub fn auc_series(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.auc_mean).collect()
    }

    pub fn metrics_csv(&self) -> String {
        let k = self.rounds.first().map_or(0, |r| r.fold_aucs.len());
        let mut out = String::from("round,pruned_id");
        for f in 0..k {
            let _ = write!(out, ",auc_f{f}");
        }
        out.push_str(",auc_mean,auc_std\n");
        for r in &self.rounds {
            let _ = write!(out, "{},{}", r.round, r.pruned_id.as_deref().unwrap_or(""));
            for a in &r.fold_aucs {
                let _ = write!(out, ",{a}");
            }
            let _ = writeln!(out, ",{},{}", r.auc_mean, r.auc_std);
        }
        out
    }

    /// Writes `metrics.csv`, `prune_list.txt`, one misclassification table per
    /// round and `prune_log.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let put = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| CoreError::io(path, e));
        let mis = dir.join(MISCLASS_DIR);
        std::fs::create_dir_all(&mis).map_err(|e| CoreError::io(&mis, e))?;
        put(&dir.join(METRICS_FILE), &self.metrics_csv())?;
        let list: String = self.prune_list.iter().map(|id| format!("{id}\n")).collect();
        put(&dir.join(PRUNE_LIST_FILE), &list)?;
        for r in &self.rounds {
            let mut t = String::from("id,count,mean_score\n");
            for (id, row) in &r.misclassified {
                let _ = writeln!(t, "{id},{},{}", row.count, row.mean_score);
            }
            put(&mis.join(format!("round_{:03}.csv", r.round)), &t)?;
        }
        put(&dir.join("prune_log.json"), &serde_json::to_string_pretty(self)?)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("prune_log.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn read_prune_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
