//! Binary nodule classifier: a convolutional backbone with a small regularising
//! head, trained with a two-phase schedule.

mod backbones;

use std::path::{Path, PathBuf};

use debias_nn::layers::{Dense, Dropout, GlobalAvgPool, Relu};
use debias_nn::loss::{bce_with_logits, sigmoid};
use debias_nn::{restore, snapshot, Adam, Layer, Real, Sequential, Tensor};
use log::info;
use serde::{Deserialize, Serialize};

pub use backbones::Backbone;

use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::train::{self, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden: 256, dropout: 0.5 }
    }
}

/// Which backbone layers train in each phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Phase 1 trains the head only; phase 2 also trains the last backbone stage.
    FreezeBackbone,
    /// Every layer trains in both phases.
    TrainAll,
    /// `FreezeBackbone` when pretrained weights were loaded, else `TrainAll`.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub backbone: String,
    /// Divides every backbone channel count (1 = the published widths).
    pub width_divisor: usize,
    pub input_size: usize,
    pub head: HeadSpec,
    pub freeze: FreezePolicy,
    /// Safetensors file with backbone weights, matched by parameter name.
    pub pretrained: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backbone: "vgg16".into(),
            width_divisor: 1,
            input_size: 224,
            head: HeadSpec::default(),
            freeze: FreezePolicy::Auto,
            pretrained: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub learning_rate: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phase1: Phase,
    pub phase2: Phase,
    pub batch_size: usize,
    pub input_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            phase1: Phase { learning_rate: 5e-4, epochs: 50 },
            phase2: Phase { learning_rate: 1e-5, epochs: 10 },
            batch_size: 16,
            input_size: 224,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in [self.phase1, self.phase2].iter().enumerate() {
            if !(p.learning_rate > 0.0) || p.epochs == 0 {
                return Err(CoreError::Config(format!("phase {} needs a positive learning rate and epochs", i + 1)));
            }
        }
        if self.phase2.learning_rate >= self.phase1.learning_rate {
            return Err(CoreError::Config("fine-tuning learning rate must be below the phase-1 rate".into()));
        }
        if self.batch_size == 0 || self.input_size == 0 {
            return Err(CoreError::Config("batch size and input size must be positive".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1.epochs + self.phase2.epochs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsManifest {
    pub kind: String,
    pub config: ClassifierConfig,
    pub pretrained_loaded: bool,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub struct Classifier<T: Real> {
    cfg: ClassifierConfig,
    backbone: Backbone,
    /// Backbone stages followed by the head.
    net: Sequential<T>,
    stages: usize,
    pretrained_loaded: bool,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Builds a freshly initialised classifier, loading pretrained backbone
/// weights when configured.
pub fn build_classifier<T: Real>(cfg: &ClassifierConfig) -> Result<Classifier<T>> {
    let backbone = Backbone::parse(&cfg.backbone)?;
    if cfg.width_divisor == 0 || cfg.head.hidden == 0 || !(0.0..1.0).contains(&cfg.head.dropout) {
        return Err(CoreError::Config("width divisor and head size must be positive, dropout in [0, 1)".into()));
    }
    if cfg.input_size < 32 {
        return Err(CoreError::Config(format!("classifier input {} is below the minimum of 32", cfg.input_size)));
    }
    let mut rng = debias_nn::seeded_rng(cfg.seed);
    let features = backbones::build::<T>(backbone, cfg.width_divisor, &mut rng);
    let stages = features.stages.len();
    let mut net = Sequential::new();
    for s in features.stages {
        net.push(s);
    }
    // head weights come from their own stream so backbone choices do not move them
    let mut head_rng = debias_nn::seeded_rng(cfg.seed ^ 0x4ead);
    net.push(
        Sequential::new()
            .with(GlobalAvgPool::new())
            .with(Dense::new("head.fc1", features.channels, cfg.head.hidden, &mut head_rng))
            .with(Relu::new())
            .with(Dropout::new(cfg.head.dropout, cfg.seed ^ 0xd0))
            .with(Dense::new("head.fc2", cfg.head.hidden, 1, &mut head_rng)),
    );
    net.need_input_grad = false;
    let mut model = Classifier {
        cfg: cfg.clone(),
        backbone,
        net,
        stages,
        pretrained_loaded: false,
        best_epoch: 0,
        best_val_loss: f64::NAN,
    };
    if let Some(path) = &cfg.pretrained {
        let loaded = debias_nn::load_params(&mut model.net, path, false)?;
        if loaded == 0 {
            return Err(CoreError::Config(format!("{} shares no parameters with {}", path.display(), backbone.name())));
        }
        model.pretrained_loaded = true;
    }
    Ok(model)
}

impl<T: Real> Classifier<T> {
    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn pretrained_loaded(&self) -> bool {
        self.pretrained_loaded
    }

    fn effective_freeze(&self) -> FreezePolicy {
        match self.cfg.freeze {
            FreezePolicy::Auto if self.pretrained_loaded => FreezePolicy::FreezeBackbone,
            FreezePolicy::Auto => FreezePolicy::TrainAll,
            p => p,
        }
    }

    fn set_phase(&mut self, phase: usize) {
        let freeze = self.effective_freeze() == FreezePolicy::FreezeBackbone;
        let last = self.stages - 1;
        for (i, layer) in self.net.layers_mut().iter_mut().enumerate() {
            let frozen = freeze && i < self.stages && !(phase == 2 && i == last);
            layer.set_frozen(frozen);
        }
    }

    /// Values of the head parameters, in visit order.
    pub fn head_weights(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.net.params(&mut |p| {
            if p.name.starts_with("head.") {
                out.push(p.value.clone());
            }
        });
        out
    }

    fn input(&self, img: &GrayImage) -> Result<Vec<f32>> {
        let plane = train::unit_plane(img, self.cfg.input_size)?;
        Ok(plane.repeat(3))
    }

    fn tensor(&self, planes: &[&[f32]]) -> Tensor<T> {
        let s = self.cfg.input_size;
        let data = planes.iter().flat_map(|p| p.iter().map(|&v| T::lit(v as f64))).collect();
        Tensor::from_vec([planes.len(), 3, s, s], data)
    }

    fn logit(&self, input: &[f32]) -> T {
        self.net.infer(&self.tensor(&[input])).data()[0]
    }

    /// Nodule probability in inference mode.
    pub fn predict(&self, img: &GrayImage) -> Result<f64> {
        let x = self.input(img)?;
        Ok(sigmoid(self.logit(&x)).to_f64().unwrap_or(f64::NAN))
    }

    /// Scores a batch in one forward pass.
    pub fn predict_batch(&self, imgs: &[&GrayImage]) -> Result<Vec<f64>> {
        let inputs = imgs.iter().map(|i| self.input(i)).collect::<Result<Vec<_>>>()?;
        let out = self.net.infer(&self.tensor(&inputs.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        Ok(out.data().iter().map(|&z| sigmoid(z).to_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn manifest(&self) -> ClsManifest {
        ClsManifest {
            kind: "classifier".into(),
            config: self.cfg.clone(),
            pretrained_loaded: self.pretrained_loaded,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        train::save_checkpoint(dir, &self.net, &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: ClsManifest = train::read_manifest(dir)?;
        if m.kind != "classifier" {
            return Err(CoreError::Config(format!("{} holds a `{}` model, not a classifier", dir.display(), m.kind)));
        }
        let cfg = ClassifierConfig { pretrained: None, ..m.config.clone() };
        let mut model = build_classifier::<T>(&cfg)?;
        train::load_weights(dir, &mut model.net)?;
        model.cfg = m.config;
        model.pretrained_loaded = m.pretrained_loaded;
        model.best_epoch = m.best_epoch;
        model.best_val_loss = m.best_val_loss;
        Ok(model)
    }
}

pub fn predict_nodule_prob<T: Real>(model: &Classifier<T>, img: &GrayImage) -> Result<f64> {
    model.predict(img)
}

/// 1-based epoch with the lowest loss; the earliest wins ties.
pub fn select_checkpoint(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

fn check_split(name: &str, set: &[(GrayImage, bool)]) -> Result<()> {
    let pos = set.iter().filter(|s| s.1).count();
    if pos == 0 || pos == set.len() {
        return Err(CoreError::arg(format!("{name} split must contain both classes ({pos} of {} nodule)", set.len())));
    }
    Ok(())
}

/// Two-phase training; returns the weights from the epoch with the lowest
/// validation loss across both phases.
pub fn train_fold<T: Real>(
    mut model: Classifier<T>,
    train_set: &[(GrayImage, bool)],
    val_set: &[(GrayImage, bool)],
    sched: &TrainSchedule,
) -> Result<(Classifier<T>, Vec<EpochRecord>)> {
    sched.validate()?;
    if sched.input_size != model.cfg.input_size {
        return Err(CoreError::Config(format!(
            "schedule input size {} differs from the model's {}",
            sched.input_size, model.cfg.input_size
        )));
    }
    check_split("training", train_set)?;
    check_split("validation", val_set)?;
    let train_x = train_set.iter().map(|(i, _)| model.input(i)).collect::<Result<Vec<_>>>()?;
    let train_y: Vec<T> = train_set.iter().map(|s| if s.1 { T::one() } else { T::zero() }).collect();
    let val_x = val_set.iter().map(|(i, _)| model.input(i)).collect::<Result<Vec<_>>>()?;

    let mut rng = debias_nn::seeded_rng(sched.seed ^ 0xc1a55);
    let idx: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(sched.total_epochs());
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    for (phase, p) in [(1, sched.phase1), (2, sched.phase2)] {
        model.set_phase(phase);
        let mut opt = Adam::new(p.learning_rate);
        for _ in 0..p.epochs {
            let epoch = history.len() + 1;
            let (mut total, mut correct) = (0.0, 0usize);
            for batch in train::batches(&idx, sched.batch_size, &mut rng) {
                let x = model.tensor(&batch.iter().map(|&i| train_x[i].as_slice()).collect::<Vec<_>>());
                let y: Vec<T> = batch.iter().map(|&i| train_y[i]).collect();
                let logits = model.net.forward(&x);
                let (loss, grad) = bce_with_logits(&logits, &y);
                model.net.backward(&grad);
                opt.step(&mut model.net);
                total += loss.to_f64().unwrap_or(f64::NAN) * batch.len() as f64;
                correct += logits.data().iter().zip(&y).filter(|(&z, &t)| (z > T::zero()) == (t > T::zero())).count();
            }
            let (mut val_loss, mut val_correct) = (0.0, 0usize);
            for (x, (_, label)) in val_x.iter().zip(val_set) {
                let z = model.logit(x);
                let t = if *label { T::one() } else { T::zero() };
                val_loss += bce_with_logits(&Tensor::from_vec([1, 1, 1, 1], vec![z]), &[t]).0.to_f64().unwrap_or(f64::NAN);
                val_correct += ((z > T::zero()) == *label) as usize;
            }
            let val_loss = val_loss / val_set.len() as f64;
            let rec = EpochRecord {
                epoch,
                phase,
                lr: p.learning_rate,
                train_loss: total / train_set.len() as f64,
                val_loss,
                val_metric: Some(val_correct as f64 / val_set.len() as f64),
                train_metric: Some(correct as f64 / train_set.len() as f64),
            };
            info!(
                "cls epoch {epoch} (phase {phase}): loss {:.4} acc {:.3} val loss {val_loss:.4} val acc {:.3}",
                rec.train_loss,
                rec.train_metric.unwrap_or(f64::NAN),
                rec.val_metric.unwrap_or(f64::NAN)
            );
            history.push(rec);
            if best.as_ref().is_none_or(|b| val_loss < b.0) {
                best = Some((val_loss, epoch, snapshot(&model.net)));
            }
        }
    }
    let (best_val_loss, best_epoch, weights) = best.expect("schedule has epochs");
    restore(&mut model.net, &weights);
    model.set_phase(1);
    model.best_epoch = best_epoch;
    model.best_val_loss = best_val_loss;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::BitDepth;

    fn small(backbone: &str) -> ClassifierConfig {
        ClassifierConfig {
            backbone: backbone.into(),
            width_divisor: 16,
            input_size: 32,
            head: HeadSpec { hidden: 8, dropout: 0.5 },
            ..Default::default()
        }
    }

    fn gray(seed: u64, size: usize) -> GrayImage {
        let px = (0..size * size).map(|i| ((i as u64 * 2654435761 + seed * 97) % 256) as u16).collect();
        GrayImage::new(size, size, BitDepth::Eight, px).unwrap()
    }

    #[test]
    fn every_backbone_yields_a_probability() {
        for name in ["vgg16", "vgg19", "resnet50", "densenet121"] {
            let m = build_classifier::<f32>(&small(name)).unwrap();
            let p = m.predict(&gray(1, 40)).unwrap();
            assert!((0.0..=1.0).contains(&p), "{name}: {p}");
        }
    }

    #[test]
    fn default_vgg16_on_224_input() {
        let cfg = ClassifierConfig { width_divisor: 8, ..Default::default() };
        let m = build_classifier::<f32>(&cfg).unwrap();
        assert_eq!(m.backbone(), Backbone::Vgg16);
        let p = m.predict(&gray(2, 224)).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn unknown_backbone_is_an_argument_error() {
        assert!(matches!(build_classifier::<f32>(&small("alexnet")), Err(CoreError::Argument(_))));
    }

    #[test]
    fn seeded_builds_share_head_weights() {
        let a = build_classifier::<f32>(&small("vgg16")).unwrap();
        let b = build_classifier::<f32>(&small("vgg16")).unwrap();
        assert_eq!(a.head_weights(), b.head_weights());
        let c = build_classifier::<f32>(&ClassifierConfig { seed: 1, ..small("vgg16") }).unwrap();
        assert_ne!(a.head_weights(), c.head_weights());
    }

    #[test]
    fn prediction_is_batch_invariant_and_deterministic() {
        let m = build_classifier::<f32>(&small("resnet50")).unwrap();
        let imgs: Vec<_> = (0..4).map(|s| gray(s, 32)).collect();
        let batch = m.predict_batch(&imgs.iter().collect::<Vec<_>>()).unwrap();
        for (img, &p) in imgs.iter().zip(&batch) {
            assert_eq!(m.predict(img).unwrap(), p);
            assert_eq!(m.predict(img).unwrap(), m.predict(img).unwrap());
        }
    }

    #[test]
    fn checkpoint_selection_is_argmin() {
        assert_eq!(select_checkpoint(&[0.7, 0.5, 0.6]), Some(2));
        assert_eq!(select_checkpoint(&[0.5, 0.5]), Some(1));
        assert_eq!(select_checkpoint(&[]), None);
    }

    #[test]
    fn schedule_validation() {
        assert!(TrainSchedule::default().validate().is_ok());
        let mut s = TrainSchedule::default();
        s.phase2.learning_rate = 1e-3;
        assert!(s.validate().is_err());
        s = TrainSchedule::default();
        s.phase1.epochs = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_class_split_is_rejected() {
        let m = build_classifier::<f32>(&small("vgg16")).unwrap();
        let only_nodules: Vec<_> = (0..4).map(|s| (gray(s, 32), true)).collect();
        let mixed: Vec<_> = (0..4).map(|s| (gray(s, 32), s % 2 == 0)).collect();
        let sched = TrainSchedule { input_size: 32, ..Default::default() };
        assert!(matches!(train_fold(m, &only_nodules, &mixed, &sched), Err(CoreError::Argument(_))));
    }

    #[test]
    fn freeze_policy_follows_pretrained_weights() {
        let dir = tempfile::tempdir().unwrap();
        let donor = build_classifier::<f32>(&small("vgg16")).unwrap();
        let path = dir.path().join("backbone.safetensors");
        debias_nn::save_params(&donor.net, &path).unwrap();
        let cfg = ClassifierConfig { pretrained: Some(path), seed: 9, ..small("vgg16") };
        let mut m = build_classifier::<f32>(&cfg).unwrap();
        assert!(m.pretrained_loaded());
        assert_eq!(m.effective_freeze(), FreezePolicy::FreezeBackbone);
        m.set_phase(1);
        let trainable = |m: &Classifier<f32>| {
            let mut n = 0;
            m.net.params(&mut |p| n += p.trainable() as usize);
            n
        };
        let p1 = trainable(&m);
        m.set_phase(2);
        assert!(trainable(&m) > p1);
        let fresh = build_classifier::<f32>(&small("vgg16")).unwrap();
        assert_eq!(fresh.effective_freeze(), FreezePolicy::TrainAll);
    }
}
