//! Experiments A to F: per-experiment preprocessing, master training and
//! external testing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use debias_nn::Real;
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{build_classifier, train_fold, Classifier, ClassifierConfig, TrainSchedule};
use crate::corpus::{DatasetManifest, ImageRecord, Label};
use crate::error::{CoreError, Result};
use crate::image::{GrayImage, LungMask};
use crate::imgops::{apply_mask, close_crop, equalize_histogram, letterbox_resize};
use crate::lungseg::{qc_mask, repair_mask, MaskRepairParams, QcReason, Segmenter, DEFAULT_QC_RATIO};
use crate::pruner::FoldTrainer;
use crate::ribsup::Suppressor;
use crate::train::EpochRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentLabel {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ExperimentLabel {
    pub const ALL: [Self; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    /// `(segmentation, cropping, rib_suppression)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Self::A => (false, false, false),
            Self::B => (false, false, true),
            Self::C => (true, false, false),
            Self::D => (true, false, true),
            Self::E => (true, true, false),
            Self::F => (true, true, true),
        }
    }

    pub fn as_str(self) -> &'static str {
        ["A", "B", "C", "D", "E", "F"][self as usize]
    }
}

impl std::fmt::Display for ExperimentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExperimentLabel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::arg(format!("unknown experiment `{s}` (expected A to F)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ExperimentLabel", into = "ExperimentLabel")]
pub struct ExperimentConfig {
    label: ExperimentLabel,
}

impl TryFrom<ExperimentLabel> for ExperimentConfig {
    type Error = CoreError;

    fn try_from(label: ExperimentLabel) -> Result<Self> {
        Ok(Self::from_label(label))
    }
}

impl From<ExperimentConfig> for ExperimentLabel {
    fn from(c: ExperimentConfig) -> Self {
        c.label
    }
}

impl ExperimentConfig {
    /// Fails when cropping is requested without segmentation.
    pub fn new(segmentation: bool, cropping: bool, rib_suppression: bool) -> Result<Self> {
        let flags = (segmentation, cropping, rib_suppression);
        ExperimentLabel::ALL
            .into_iter()
            .find(|l| l.flags() == flags)
            .map(Self::from_label)
            .ok_or_else(|| CoreError::Config("cropping requires segmentation".into()))
    }

    pub fn from_label(label: ExperimentLabel) -> Self {
        Self { label }
    }

    pub fn label(&self) -> ExperimentLabel {
        self.label
    }

    pub fn segmentation(&self) -> bool {
        self.label.flags().0
    }

    pub fn cropping(&self) -> bool {
        self.label.flags().1
    }

    pub fn rib_suppression(&self) -> bool {
        self.label.flags().2
    }
}

pub fn make_experiment_configs() -> Vec<ExperimentConfig> {
    ExperimentLabel::ALL.into_iter().map(ExperimentConfig::from_label).collect()
}

/// Either a classifier-ready image or the reason it was dropped.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    Included(GrayImage),
    Excluded(QcReason),
}

/// The fixed preprocessing chain for one experiment.
pub struct Pipeline<'a, T: Real> {
    cfg: ExperimentConfig,
    seg: Option<&'a Segmenter<T>>,
    supp: Option<&'a Suppressor<T>>,
    pub repair: MaskRepairParams,
    pub qc_ratio: f64,
    pub output_size: usize,
}

pub fn compose_pipeline<'a, T: Real>(
    cfg: ExperimentConfig,
    seg: Option<&'a Segmenter<T>>,
    supp: Option<&'a Suppressor<T>>,
    output_size: usize,
) -> Result<Pipeline<'a, T>> {
    if cfg.segmentation() && seg.is_none() {
        return Err(CoreError::Config(format!("experiment {} needs a segmentation model", cfg.label())));
    }
    if cfg.rib_suppression() && supp.is_none() {
        return Err(CoreError::Config(format!("experiment {} needs a rib suppression model", cfg.label())));
    }
    if output_size == 0 {
        return Err(CoreError::Config("output size must be positive".into()));
    }
    Ok(Pipeline {
        cfg,
        seg: seg.filter(|_| cfg.segmentation()),
        supp: supp.filter(|_| cfg.rib_suppression()),
        repair: MaskRepairParams::default(),
        qc_ratio: DEFAULT_QC_RATIO,
        output_size,
    })
}

impl<T: Real> Pipeline<'_, T> {
    pub fn config(&self) -> ExperimentConfig {
        self.cfg
    }

    /// Equalize, suppress, mask, crop, resize. A `gold` mask replaces the
    /// predicted one and skips repair and QC.
    pub fn apply(&self, img: &GrayImage, gold: Option<&LungMask>) -> Result<Prepared> {
        let eq = equalize_histogram(img);
        let mut work = match self.supp {
            Some(s) => s.suppress(&eq)?,
            None => eq.clone(),
        };
        if let Some(seg) = self.seg {
            let mask = match gold {
                Some(m) => m.resize_nearest(img.width(), img.height()),
                None => {
                    let mask = repair_mask(&seg.predict_mask(&eq)?, &self.repair);
                    let qc = qc_mask(&mask, self.qc_ratio);
                    if !qc.accepted {
                        return Ok(Prepared::Excluded(qc.reason));
                    }
                    mask
                }
            };
            work = apply_mask(&work, &mask)?;
        }
        if self.cfg.cropping() {
            work = match close_crop(&work) {
                Ok((c, _)) => c,
                Err(CoreError::EmptyContent) => return Ok(Prepared::Excluded(QcReason::TooFewContours)),
                Err(e) => return Err(e),
            };
        }
        Ok(Prepared::Included(letterbox_resize(&work, self.output_size)?))
    }
}

/// Preprocessed images keyed by id, plus the ones QC dropped.
#[derive(Clone, Debug, Default)]
pub struct PreparedSet {
    pub images: BTreeMap<String, (GrayImage, Label)>,
    pub excluded: BTreeMap<String, QcReason>,
}

impl PreparedSet {
    /// Runs `pipeline` over in-memory `(record, image, gold mask)` triples.
    pub fn build<'r, T: Real>(
        pipeline: &Pipeline<'_, T>,
        items: impl IntoIterator<Item = (&'r ImageRecord, GrayImage, Option<LungMask>)>,
    ) -> Result<Self> {
        let mut out = Self::default();
        for (rec, img, gold) in items {
            match pipeline.apply(&img, gold.as_ref())? {
                Prepared::Included(p) => {
                    out.images.insert(rec.id.clone(), (p, rec.label));
                }
                Prepared::Excluded(reason) => {
                    warn!("{} excluded: {}", rec.id, reason.as_str());
                    out.excluded.insert(rec.id.clone(), reason);
                }
            }
        }
        Ok(out)
    }

    /// Loads every record's PNG (and `masks/<id>.png` next to the manifest
    /// when `gold_masks` is set and the file exists).
    pub fn from_manifest<T: Real>(manifest: &DatasetManifest, pipeline: &Pipeline<'_, T>, gold_masks: bool) -> Result<Self> {
        let mut items = Vec::with_capacity(manifest.len());
        for rec in manifest.records() {
            let img = GrayImage::load_png(&manifest.resolve(rec))?;
            let mask_file = manifest.base_dir().join("masks").join(format!("{}.png", rec.id));
            let gold = if gold_masks && mask_file.exists() {
                Some(LungMask::load_png(&mask_file)?)
            } else {
                None
            };
            items.push((rec, img, gold));
        }
        Self::build(pipeline, items)
    }

    pub fn get_image(&self, id: &str) -> Option<&(GrayImage, Label)> {
        self.images.get(id)
    }

    fn labelled(&self, recs: &[&ImageRecord]) -> Result<Vec<(GrayImage, bool)>> {
        recs.iter()
            .map(|r| {
                self.images
                    .get(&r.id)
                    .map(|(img, l)| (img.clone(), l.is_nodule()))
                    .ok_or_else(|| CoreError::arg(format!("`{}` has no preprocessed image", r.id)))
            })
            .collect()
    }

    /// Drops manifest rows whose image was excluded.
    pub fn restrict(&self, manifest: &DatasetManifest) -> DatasetManifest {
        let gone = self.excluded.keys().map(String::as_str).collect();
        manifest.without(&gone)
    }
}

/// Classifier-backed fold trainer for pruning.
pub struct ClassifierTrainer<'a> {
    pub images: &'a PreparedSet,
    pub cfg: ClassifierConfig,
    pub sched: TrainSchedule,
}

impl FoldTrainer for ClassifierTrainer<'_> {
    type Model = Classifier<f32>;

    fn train(
        &mut self,
        fold: usize,
        train: &[&ImageRecord],
        val: &[&ImageRecord],
        warm: Option<Self::Model>,
    ) -> Result<Self::Model> {
        let model = match warm {
            Some(m) => m,
            None => build_classifier(&ClassifierConfig {
                seed: self.cfg.seed.wrapping_add(fold as u64),
                ..self.cfg.clone()
            })?,
        };
        let sched = TrainSchedule {
            seed: self.sched.seed.wrapping_add(fold as u64),
            ..self.sched.clone()
        };
        let (model, _) = train_fold(model, &self.images.labelled(train)?, &self.images.labelled(val)?, &sched)?;
        Ok(model)
    }

    fn score(&self, model: &Self::Model, rec: &ImageRecord) -> Result<f64> {
        let (img, _) = self
            .images
            .get_image(&rec.id)
            .ok_or_else(|| CoreError::arg(format!("`{}` has no preprocessed image", rec.id)))?;
        model.predict(img)
    }
}

pub const EXTERNAL_FILE: &str = "external.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MASTER_VAL_FRACTION: f64 = 0.15;

/// Trains one model on everything left after pruning, holding out a seeded,
/// stratified 15% for checkpoint selection.
pub fn train_master<T: Real>(
    manifest: &DatasetManifest,
    prune_list: &[String],
    images: &PreparedSet,
    cls: &ClassifierConfig,
    sched: &TrainSchedule,
) -> Result<(Classifier<T>, Vec<EpochRecord>)> {
    let pruned: std::collections::HashSet<&str> = prune_list.iter().map(String::as_str).collect();
    let kept = manifest.without(&pruned);
    let counts = kept.class_counts();
    if counts.nodule != counts.non_nodule || counts.nodule < 2 {
        return Err(CoreError::arg(format!(
            "master training needs balanced classes with at least 2 images each, got {} nodule vs {} non-nodule",
            counts.nodule, counts.non_nodule
        )));
    }
    let mut rng = debias_nn::seeded_rng(sched.seed ^ 0x3a57e5);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for label in [Label::Nodule, Label::NonNodule] {
        let mut recs: Vec<&ImageRecord> = kept.records().iter().filter(|r| r.label == label).collect();
        recs.shuffle(&mut rng);
        let n_val = ((recs.len() as f64 * MASTER_VAL_FRACTION).round() as usize).clamp(1, recs.len().saturating_sub(1).max(1));
        val.extend(recs.drain(..n_val));
        train.extend(recs);
    }
    info!("master training on {} images, validating on {}", train.len(), val.len());
    let model = build_classifier(cls)?;
    train_fold(model, &images.labelled(&train)?, &images.labelled(&val)?, sched)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalRow {
    pub id: String,
    pub label: Label,
    pub probability: Option<f64>,
    pub exclusion_reason: Option<QcReason>,
}

impl ExternalRow {
    pub fn included(&self) -> bool {
        self.probability.is_some()
    }

    pub fn correct(&self) -> Option<bool> {
        self.probability.map(|p| (p > 0.5) == self.label.is_nodule())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalTestResult {
    pub rows: Vec<ExternalRow>,
    /// Fraction of included images classified correctly at 0.5; for an
    /// all-nodule set this is the fraction with probability above 0.5.
    pub accuracy: f64,
}

impl ExternalTestResult {
    pub fn from_rows(rows: Vec<ExternalRow>) -> Result<Self> {
        let judged: Vec<bool> = rows.iter().filter_map(ExternalRow::correct).collect();
        if judged.is_empty() {
            return Err(CoreError::Evaluation("no external image survived preprocessing".into()));
        }
        let accuracy = judged.iter().filter(|&&c| c).count() as f64 / judged.len() as f64;
        Ok(Self { rows, accuracy })
    }

    pub fn included(&self) -> usize {
        self.rows.iter().filter(|r| r.included()).count()
    }

    pub fn excluded(&self) -> usize {
        self.rows.len() - self.included()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,label,probability,included,exclusion_reason\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.id,
                r.label,
                r.probability.map(|p| p.to_string()).unwrap_or_default(),
                r.included(),
                r.exclusion_reason.map(QcReason::as_str).unwrap_or("")
            );
        }
        out
    }

    /// Reads back the table written by `to_csv`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |reason: String| CoreError::Schema { row: i + 1, reason };
            let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {k}")));
            let probability = match field(2)? {
                "" => None,
                p => Some(p.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            };
            let exclusion_reason = match field(4)? {
                "" => None,
                r => Some(r.parse().map_err(|_| bad(format!("unknown exclusion reason `{r}`")))?),
            };
            rows.push(ExternalRow {
                id: field(0)?.to_string(),
                label: field(1)?.parse().map_err(|_| bad("bad label".into()))?,
                probability,
                exclusion_reason,
            });
        }
        Self::from_rows(rows)
    }

    /// Writes `external.csv` and `summary.json`.
    pub fn write(&self, dir: &Path, config: &serde_json::Value) -> Result<()> {
        let csv = dir.join(EXTERNAL_FILE);
        std::fs::write(&csv, self.to_csv()).map_err(|e| CoreError::io(&csv, e))?;
        let summary = serde_json::json!({
            "accuracy": self.accuracy,
            "images": self.rows.len(),
            "included": self.included(),
            "excluded": self.excluded(),
            "config": config,
        });
        let json = dir.join(SUMMARY_FILE);
        std::fs::write(&json, serde_json::to_string_pretty(&summary)?).map_err(|e| CoreError::io(&json, e))
    }
}

/// Scores already-prepared external images.
pub fn score_prepared<T: Real>(model: &Classifier<T>, records: &[&ImageRecord], prepared: &PreparedSet) -> Result<ExternalTestResult> {
    let rows = records
        .iter()
        .map(|rec| {
            Ok(ExternalRow {
                id: rec.id.clone(),
                label: rec.label,
                probability: match prepared.images.get(&rec.id) {
                    Some((img, _)) => Some(model.predict(img)?),
                    None => None,
                },
                exclusion_reason: prepared.excluded.get(&rec.id).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExternalTestResult::from_rows(rows)
}

/// Preprocesses every external image with `pipeline` (predicted masks only)
/// and scores it.
pub fn external_test<T: Real>(model: &Classifier<T>, external: &DatasetManifest, pipeline: &Pipeline<'_, T>) -> Result<ExternalTestResult> {
    let prepared = PreparedSet::from_manifest(external, pipeline, false)?;
    let recs: Vec<&ImageRecord> = external.records().iter().collect();
    score_prepared(model, &recs, &prepared)
}
