//! `cxr-debias`: ingest, phantoms, model training, pruning, ablations and
//! reports from the command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use debias_core::ablation::{
    compose_pipeline, external_test, train_master, ClassifierTrainer, ExperimentConfig,
    ExperimentLabel, ExternalTestResult, Pipeline, Prepared, PreparedSet, EXTERNAL_FILE, SUMMARY_FILE,
};
use debias_core::corpus::{
    convert_dicom, load_manifest, read_jsrt_raw, stratified_kfold, DatasetManifest, FoldAssignment, ImageRecord,
    Label, RawOptions, Source, Subtlety,
};
use debias_core::image::{GrayImage, LungMask};
use debias_core::imgops::{equalize_histogram, equalize_pair, resize};
use debias_core::phantom::{bone_free_path, generate_corpus, mask_path, ConfounderPolicy, CorpusOptions};
use debias_core::pruner::{evolutionary_prune, read_prune_list, PruneLog, Rounds, METRICS_FILE, PRUNE_LIST_FILE};
use debias_core::train::EpochRecord;
use debias_core::{ClsModel, SegModel, SuppModel};
use log::info;

pub mod config;
pub mod report;

use config::{parse_override, RunConfig};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "cxr-debias", version, about = "Chest X-ray debiasing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any configuration value, e.g. `--set schedule.phase1.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Experiment label, A to F.
    #[arg(long)]
    pub experiment: Option<ExperimentLabel>,
    /// Run directory name under `<out>/<experiment>/`; defaults to a UTC timestamp.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Lung segmentation model directory (experiments C to F).
    #[arg(long)]
    pub seg_model: Option<PathBuf>,
    /// Rib suppression model directory (experiments B, D, F).
    #[arg(long)]
    pub supp_model: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert JSRT raw or LIDC DICOM images to PNG and write a manifest.
    Ingest {
        #[arg(long, value_parser = ["jsrt", "lidc"])]
        source: String,
        #[arg(long)]
        input: PathBuf,
        /// JSRT metadata CSV: id,subtlety,center_x,center_y,size_mm.
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Directory of `<id>.png` gold lung masks to copy alongside.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Output edge length (LIDC letterbox; JSRT downsampling when set).
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic phantom corpus.
    Phantom {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "absent")]
        confounder: ConfounderPolicy,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Stratified k-fold assignment.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the lung segmenter on a corpus with `masks/`.
    TrainSeg {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the rib suppressor on a corpus with `bone_free/`.
    TrainRibsup {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Apply an experiment's preprocessing and write the results as PNGs.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evolutionary pruning with k-fold classifiers.
    Prune {
        #[arg(long)]
        manifest: PathBuf,
        /// `id,fold` CSV; drawn from the seed when absent.
        #[arg(long)]
        folds: Option<PathBuf>,
        /// A count or `to_balance`.
        #[arg(long)]
        rounds: Option<Rounds>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train the master classifier on the pruned, balanced set.
    TrainMaster {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the run directory's prune list when one exists.
        #[arg(long)]
        prune_list: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score an external set with a master model.
    ExternalTest {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to `<run>/model`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Render figures and tables for a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Manifest for the pruned-records table.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        target: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` and runs; returns the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn effective(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
    let overrides = common.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    tweak(&mut cfg);
    Ok(cfg.finalize()?)
}

/// Refuses to clobber `paths` without `--force`.
fn guard(force: bool, paths: &[PathBuf]) -> anyhow::Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!(UsageError(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    Ok(())
}

fn mkdir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_dir(cfg: &RunConfig, run: &RunArgs) -> PathBuf {
    let id = run
        .run_id
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    cfg.out.join(cfg.experiment.as_str()).join(id)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn load_models(cfg: &RunConfig, run: &RunArgs) -> anyhow::Result<(Option<SegModel>, Option<SuppModel>)> {
    let exp = ExperimentConfig::from_label(cfg.experiment);
    let need = |flag: bool, path: &Option<PathBuf>, what: &str| -> anyhow::Result<Option<PathBuf>> {
        match (flag, path) {
            (true, None) => bail!(UsageError(format!("experiment {} needs --{what}", cfg.experiment))),
            (true, Some(p)) => Ok(Some(p.clone())),
            (false, _) => Ok(None),
        }
    };
    let seg = need(exp.segmentation(), &run.seg_model, "seg-model")?
        .map(|p| SegModel::load(&p).with_context(|| format!("loading segmenter from {}", p.display())))
        .transpose()?;
    let supp = need(exp.rib_suppression(), &run.supp_model, "supp-model")?
        .map(|p| SuppModel::load(&p).with_context(|| format!("loading suppressor from {}", p.display())))
        .transpose()?;
    Ok((seg, supp))
}

fn pipeline<'a>(cfg: &RunConfig, seg: Option<&'a SegModel>, supp: Option<&'a SuppModel>) -> anyhow::Result<Pipeline<'a, f32>> {
    let mut p = compose_pipeline(ExperimentConfig::from_label(cfg.experiment), seg, supp, cfg.classifier.input_size)?;
    p.repair = cfg.pipeline.repair();
    p.qc_ratio = cfg.pipeline.qc_ratio;
    Ok(p)
}

fn write_excluded(path: &Path, prepared: &PreparedSet) -> anyhow::Result<()> {
    let mut text = String::from("id,reason\n");
    for (id, r) in &prepared.excluded {
        text.push_str(&format!("{id},{}\n", r.as_str()));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Ingest { source, input, metadata, masks, size, common } => {
            let cfg = effective(&common, |_| {})?;
            ingest(&cfg, &source, &input, metadata.as_deref(), masks.as_deref(), size, common.force)
        }
        Command::Phantom { n, confounder, size, common } => {
            let cfg = effective(&common, |_| {})?;
            guard(common.force, &[cfg.out.join("manifest.csv")])?;
            let opts = CorpusOptions { size, ..Default::default() };
            let m = generate_corpus(n, confounder, cfg.seed, &cfg.out, &opts)?;
            cfg.snapshot(&cfg.out)?;
            info!("wrote {} phantoms to {}", m.len(), cfg.out.display());
            Ok(())
        }
        Command::Split { manifest, k, common } => {
            let cfg = effective(&common, |c| {
                if let Some(k) = k {
                    c.prune.k = k;
                }
            })?;
            let m = load_manifest(&manifest)?;
            let path = cfg.out.join("folds.csv");
            guard(common.force, &[path.clone()])?;
            mkdir(&cfg.out)?;
            stratified_kfold(&m, cfg.prune.k, cfg.seed)?.write_csv(&path)?;
            cfg.snapshot(&cfg.out)
        }
        Command::TrainSeg { corpus, common } => {
            let cfg = effective(&common, |_| {})?;
            guard(common.force, &[cfg.out.join(debias_core::train::WEIGHTS_FILE)])?;
            let m = load_manifest(&corpus.join("manifest.csv"))?;
            let pairs = m
                .records()
                .iter()
                .map(|r| {
                    let img = equalize_histogram(&GrayImage::load_png(&m.resolve(r))?);
                    Ok((img, LungMask::load_png(&mask_path(&corpus, &r.id))?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let (model, history) = debias_core::lungseg::train_segmenter::<f32>(&pairs, &cfg.segmentation)?;
            mkdir(&cfg.out)?;
            model.save(&cfg.out)?;
            write_history(&cfg.out.join("history.csv"), &history)?;
            cfg.snapshot(&cfg.out)?;
            info!("best validation dice {:.4} at epoch {}", model.best_dice, model.best_epoch);
            Ok(())
        }
        Command::TrainRibsup { corpus, common } => {
            let cfg = effective(&common, |_| {})?;
            guard(common.force, &[cfg.out.join(debias_core::train::WEIGHTS_FILE)])?;
            let m = load_manifest(&corpus.join("manifest.csv"))?;
            let pairs = m
                .records()
                .iter()
                .map(|r| {
                    let img = GrayImage::load_png(&m.resolve(r))?;
                    let bone_free = GrayImage::load_png(&bone_free_path(&corpus, &r.id))?;
                    Ok(equalize_pair(&img, &bone_free)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let (model, history) = debias_core::ribsup::train_suppressor::<f32>(&pairs, &cfg.ribsup)?;
            mkdir(&cfg.out)?;
            model.save(&cfg.out)?;
            write_history(&cfg.out.join("history.csv"), &history)?;
            cfg.snapshot(&cfg.out)
        }
        Command::Preprocess { manifest, run, common } => {
            let cfg = effective(&common, |c| set_experiment(c, &run))?;
            let m = load_manifest(&manifest)?;
            let dir = run_dir(&cfg, &run);
            guard(common.force, &[dir.join("manifest.csv")])?;
            let (seg, supp) = load_models(&cfg, &run)?;
            let p = pipeline(&cfg, seg.as_ref(), supp.as_ref())?;
            mkdir(&dir.join("images"))?;
            let mut kept = Vec::new();
            let mut prepared = PreparedSet::default();
            for rec in m.records() {
                let img = GrayImage::load_png(&m.resolve(rec))?;
                let gold = gold_mask(&cfg, &m, rec)?;
                match p.apply(&img, gold.as_ref())? {
                    Prepared::Included(out) => {
                        let rel = PathBuf::from("images").join(format!("{}.png", rec.id));
                        out.save_png(&dir.join(&rel))?;
                        kept.push(ImageRecord { path: rel, ..rec.clone() });
                    }
                    Prepared::Excluded(reason) => {
                        prepared.excluded.insert(rec.id.clone(), reason);
                    }
                }
            }
            DatasetManifest::new(kept)?.write_csv(&dir.join("manifest.csv"))?;
            write_excluded(&dir.join("excluded.csv"), &prepared)?;
            cfg.snapshot(&dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Prune { manifest, folds, rounds, run, common } => {
            let cfg = effective(&common, |c| {
                set_experiment(c, &run);
                if let Some(r) = rounds {
                    c.prune.rounds = r;
                }
            })?;
            let m = load_manifest(&manifest)?;
            let dir = run_dir(&cfg, &run);
            guard(common.force, &[dir.join(METRICS_FILE), dir.join(PRUNE_LIST_FILE)])?;
            let (seg, supp) = load_models(&cfg, &run)?;
            let p = pipeline(&cfg, seg.as_ref(), supp.as_ref())?;
            let prepared = PreparedSet::from_manifest(&m, &p, cfg.pipeline.gold_masks)?;
            let kept = prepared.restrict(&m);
            let folds = match folds {
                Some(path) => FoldAssignment::read_csv(&path, cfg.seed)?,
                None => stratified_kfold(&kept, cfg.prune.k, cfg.seed)?,
            };
            mkdir(&dir)?;
            cfg.snapshot(&dir)?;
            folds.write_csv(&dir.join("folds.csv"))?;
            write_excluded(&dir.join("excluded.csv"), &prepared)?;
            let mut trainer = ClassifierTrainer {
                images: &prepared,
                cfg: cfg.classifier.clone(),
                sched: cfg.schedule.clone(),
            };
            let mut opts = cfg.prune.clone();
            opts.k = folds.k;
            let mut log = evolutionary_prune(&kept, &folds, &mut trainer, &opts)?;
            log.config = serde_json::to_value(&cfg)?;
            log.write(&dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::TrainMaster { manifest, prune_list, run, common } => {
            let cfg = effective(&common, |c| set_experiment(c, &run))?;
            let m = load_manifest(&manifest)?;
            let dir = run_dir(&cfg, &run);
            let model_dir = dir.join("model");
            guard(common.force, &[model_dir.join(debias_core::train::WEIGHTS_FILE)])?;
            let list_path = prune_list.unwrap_or_else(|| dir.join(PRUNE_LIST_FILE));
            let pruned = if list_path.exists() { read_prune_list(&list_path)? } else { Vec::new() };
            let (seg, supp) = load_models(&cfg, &run)?;
            let p = pipeline(&cfg, seg.as_ref(), supp.as_ref())?;
            let prepared = PreparedSet::from_manifest(&m, &p, cfg.pipeline.gold_masks)?;
            let (model, history) = train_master::<f32>(&prepared.restrict(&m), &pruned, &prepared, &cfg.classifier, &cfg.schedule)?;
            mkdir(&model_dir)?;
            model.save(&model_dir)?;
            write_history(&dir.join("master_history.csv"), &history)?;
            cfg.snapshot(&dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::ExternalTest { manifest, model, run, common } => {
            let cfg = effective(&common, |c| set_experiment(c, &run))?;
            let m = load_manifest(&manifest)?;
            let dir = run_dir(&cfg, &run);
            guard(common.force, &[dir.join(EXTERNAL_FILE), dir.join(SUMMARY_FILE)])?;
            let model_dir = model.unwrap_or_else(|| dir.join("model"));
            let cls = ClsModel::load(&model_dir).with_context(|| format!("loading classifier from {}", model_dir.display()))?;
            let (seg, supp) = load_models(&cfg, &run)?;
            let mut cfg = cfg;
            cfg.classifier.input_size = cls.config().input_size;
            let p = pipeline(&cfg, seg.as_ref(), supp.as_ref())?;
            let result = external_test(&cls, &m, &p)?;
            mkdir(&dir)?;
            result.write(&dir, &serde_json::to_value(&cfg)?)?;
            cfg.snapshot(&dir)?;
            println!("accuracy {:.4} over {} images ({} excluded)", result.accuracy, result.included(), result.excluded());
            Ok(())
        }
        Command::Report { run_dir, manifest, top_n, target, common } => {
            let cfg = effective(&common, |c| {
                if let Some(t) = target {
                    c.report.auc_target = t;
                }
                if let Some(n) = top_n {
                    c.report.top_n = n;
                }
            })?;
            let figs = run_dir.join("figures");
            let mut wrote = 0;
            if run_dir.join("prune_log.json").exists() {
                let log = PruneLog::read(&run_dir)?;
                let svg = figs.join("auc_curve.svg");
                guard(common.force, &[svg.clone()])?;
                report::render_auc_curve(&log, cfg.report.auc_target, &svg)?;
                wrote += 1;
                if let Some(mpath) = manifest {
                    let m = load_manifest(&mpath)?;
                    let n = cfg.report.top_n.min(log.prune_list.len());
                    report::report_pruned_records(&log, &m, n, &figs.join("pruned_records.csv"))?;
                }
            }
            if run_dir.join(EXTERNAL_FILE).exists() {
                let res = ExternalTestResult::read_csv(&run_dir.join(EXTERNAL_FILE))?;
                let svg = figs.join("external_scatter.svg");
                guard(common.force, &[svg.clone()])?;
                report::render_scatter(&res, &svg)?;
                wrote += 1;
            }
            if wrote == 0 {
                bail!("{} holds neither a prune log nor external results", run_dir.display());
            }
            Ok(())
        }
    }
}

fn set_experiment(c: &mut RunConfig, run: &RunArgs) {
    if let Some(e) = run.experiment {
        c.experiment = e;
    }
}

fn gold_mask(cfg: &RunConfig, m: &DatasetManifest, rec: &ImageRecord) -> anyhow::Result<Option<LungMask>> {
    let path = mask_path(m.base_dir(), &rec.id);
    Ok(if cfg.pipeline.gold_masks && path.exists() { Some(LungMask::load_png(&path)?) } else { None })
}

fn files_with_ext(dir: &Path, ext: &str, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            files_with_ext(&path, ext, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    Ok(())
}

struct JsrtMeta {
    subtlety: Option<Subtlety>,
    center: Option<(u32, u32)>,
    size_mm: Option<f64>,
}

fn read_metadata(path: &Path) -> anyhow::Result<std::collections::HashMap<String, JsrtMeta>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = std::collections::HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |k: usize| row.get(k).map(str::trim).filter(|s| !s.is_empty());
        let ctx = || format!("{} row {}", path.display(), i + 1);
        let subtlety = get(1).map(|s| s.parse::<Subtlety>().map_err(anyhow::Error::msg)).transpose().with_context(ctx)?;
        let center = match (get(2), get(3)) {
            (Some(x), Some(y)) => Some((x.parse()?, y.parse()?)),
            _ => None,
        };
        let size_mm = get(4).map(str::parse).transpose().with_context(ctx)?;
        let id = get(0).with_context(|| format!("{}: missing id", ctx()))?.to_string();
        out.insert(id, JsrtMeta { subtlety, center, size_mm });
    }
    Ok(out)
}

fn ingest(
    cfg: &RunConfig,
    source: &str,
    input: &Path,
    metadata: Option<&Path>,
    masks: Option<&Path>,
    size: Option<usize>,
    force: bool,
) -> anyhow::Result<()> {
    let out = &cfg.out;
    guard(force, &[out.join("manifest.csv")])?;
    mkdir(&out.join("images"))?;
    let meta = metadata.map(read_metadata).transpose()?.unwrap_or_default();
    let mut files = Vec::new();
    files_with_ext(input, if source == "jsrt" { "img" } else { "dcm" }, &mut files)?;
    files.sort();
    if files.is_empty() {
        bail!("no {source} images under {}", input.display());
    }
    let mut records = Vec::with_capacity(files.len());
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).context("non-UTF-8 file name")?.to_string();
        let (img, rec) = if source == "jsrt" {
            let label = if stem.starts_with("JPCLN") {
                Label::Nodule
            } else if stem.starts_with("JPCNN") {
                Label::NonNodule
            } else {
                bail!("cannot tell the class of {} (expected JPCLN* or JPCNN*)", path.display());
            };
            let mut img = read_jsrt_raw(path, 2048, 2048, RawOptions::default())?;
            if let Some(s) = size {
                img = resize(&img, s, s)?;
            }
            let m = meta.get(&stem);
            let nodule = label == Label::Nodule;
            let rec = ImageRecord {
                id: stem.clone(),
                source: Source::Jsrt,
                path: PathBuf::from("images").join(format!("{stem}.png")),
                label,
                subtlety: m.and_then(|m| m.subtlety),
                nodule_center: m.and_then(|m| m.center).filter(|_| nodule),
                nodule_size_mm: m.and_then(|m| m.size_mm).filter(|_| nodule),
                patient_id: stem.clone(),
            };
            (img, rec)
        } else {
            let rel = path.strip_prefix(input).unwrap_or(path);
            let id = rel.with_extension("").to_string_lossy().replace(['/', '\\'], "_");
            let patient = rel
                .components()
                .next()
                .filter(|_| rel.components().count() > 1)
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .unwrap_or_else(|| id.clone());
            let img = convert_dicom(path, size.unwrap_or(2048))?;
            let rec = ImageRecord {
                path: PathBuf::from("images").join(format!("{id}.png")),
                id,
                source: Source::Lidc,
                label: Label::Nodule,
                subtlety: None,
                nodule_center: None,
                nodule_size_mm: None,
                patient_id: patient,
            };
            (img, rec)
        };
        img.save_png(&out.join(&rec.path))?;
        if let Some(mdir) = masks {
            let src = mdir.join(format!("{}.png", rec.id));
            if src.exists() {
                mkdir(&out.join("masks"))?;
                LungMask::load_png(&src)?.resize_nearest(img.width(), img.height()).save_png(&mask_path(out, &rec.id))?;
            }
        }
        info!("ingested {}", rec.id);
        records.push(rec);
    }
    let manifest = DatasetManifest::new(records)?;
    manifest.write_csv(&out.join("manifest.csv"))?;
    cfg.snapshot(out)?;
    let c = manifest.class_counts();
    info!("{} nodule and {} non-nodule images", c.nodule, c.non_nodule);
    Ok(())
}
