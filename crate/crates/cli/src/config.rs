//! Run configuration: defaults, TOML file, then `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use debias_core::ablation::ExperimentLabel;
use debias_core::classifier::{ClassifierConfig, TrainSchedule};
use debias_core::lungseg::{MaskRepairParams, SegTrainConfig};
use debias_core::pruner::PruneOptions;
use debias_core::ribsup::SuppressorTrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub closing_kernel: usize,
    pub min_hole_area_fraction: f64,
    pub qc_ratio: f64,
    /// Use `masks/<id>.png` beside the manifest instead of predicting masks.
    pub gold_masks: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        let repair = MaskRepairParams::default();
        Self {
            closing_kernel: repair.closing_kernel,
            min_hole_area_fraction: repair.min_hole_area_fraction,
            qc_ratio: debias_core::lungseg::DEFAULT_QC_RATIO,
            gold_masks: true,
        }
    }
}

impl PipelineParams {
    pub fn repair(&self) -> MaskRepairParams {
        MaskRepairParams {
            closing_kernel: self.closing_kernel,
            min_hole_area_fraction: self.min_hole_area_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub auc_target: f64,
    pub top_n: usize,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self { auc_target: 0.8, top_n: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Root seed; every component seed is set from it.
    pub seed: u64,
    pub out: PathBuf,
    pub experiment: ExperimentLabel,
    pub pipeline: PipelineParams,
    pub prune: PruneOptions,
    pub report: ReportParams,
    pub classifier: ClassifierConfig,
    pub schedule: TrainSchedule,
    pub segmentation: SegTrainConfig,
    pub ribsup: SuppressorTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: "runs".into(),
            experiment: ExperimentLabel::F,
            pipeline: PipelineParams::default(),
            prune: PruneOptions::default(),
            report: ReportParams::default(),
            classifier: ClassifierConfig::default(),
            schedule: TrainSchedule::default(),
            segmentation: SegTrainConfig::default(),
            ribsup: SuppressorTrainConfig::default(),
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// First key path present in `given` but absent from `known`.
fn unknown_key(given: &Table, known: &Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => return Some(path),
            (Some(Value::Table(kt)), Value::Table(gt)) => {
                if let Some(p) = unknown_key(gt, kt, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), UsageError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| UsageError(format!("empty key in `{path}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("`{p}` in `{path}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key.path=value`; the value is read as a TOML literal, falling back
/// to a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value), UsageError> {
    let (k, v) = s.split_once('=').ok_or_else(|| UsageError(format!("override `{s}` is not key=value")))?;
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides`, in that order.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> anyhow::Result<Self> {
        let mut given = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.parse::<Table>().map_err(|e| UsageError(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut given, k, v.clone())?;
        }
        let mut table = Table::try_from(Self::default()).context("serializing defaults")?;
        merge(&mut table, given.clone());
        let cfg: Self = Value::Table(table).try_into().map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        let known = Table::try_from(&cfg).context("serializing configuration")?;
        if let Some(key) = unknown_key(&given, &known, "") {
            return Err(UsageError(format!("unknown configuration key `{key}`")).into());
        }
        Ok(cfg)
    }

    /// Pushes the root seed into every component and checks ranges.
    pub fn finalize(mut self) -> Result<Self, UsageError> {
        let s = self.seed;
        self.classifier.seed = s;
        self.schedule.seed = s;
        self.segmentation.seed = s;
        self.ribsup.seed = s;
        self.prune.seed = s;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |e: debias_core::CoreError| UsageError(e.to_string());
        self.pipeline.repair().validate().map_err(bad)?;
        self.schedule.validate().map_err(bad)?;
        self.segmentation.validate().map_err(bad)?;
        self.ribsup.validate().map_err(bad)?;
        debias_core::classifier::Backbone::parse(&self.classifier.backbone).map_err(bad)?;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(UsageError(msg.into())) };
        check(self.pipeline.qc_ratio > 0.0 && self.pipeline.qc_ratio <= 1.0, "pipeline.qc_ratio must be in (0, 1]")?;
        check((0.0..=1.0).contains(&self.report.auc_target), "report.auc_target must be in [0, 1]")?;
        check(self.prune.k >= 2, "prune.k must be at least 2")?;
        check(self.classifier.width_divisor >= 1, "classifier.width_divisor must be at least 1")?;
        check(
            self.classifier.input_size == self.schedule.input_size,
            "classifier.input_size and schedule.input_size must match",
        )?;
        check(
            (0.0..1.0).contains(&self.classifier.head.dropout),
            "classifier.head.dropout must be in [0, 1)",
        )
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the effective configuration into `dir`.
    pub fn snapshot(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}
