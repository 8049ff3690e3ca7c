//! Lung-field segmentation: residual U-Net training and inference, mask repair
//! and quality control.

mod morph;
mod resunet;

use std::path::Path;

use debias_nn::loss::{dice_loss_with_logits, sigmoid};
use debias_nn::{snapshot, restore, Adam, Layer, Real, Tensor};
use log::info;
use serde::{Deserialize, Serialize};

pub use morph::{
    close, components, dilate, erode, fill_holes, qc_mask, repair_mask, MaskRepairParams, QcReason, QcResult,
    DEFAULT_QC_RATIO, REPAIR_REFERENCE_SIZE,
};
pub use resunet::{ResUNet, SegArch};

pub use crate::metrics::dice;

use crate::error::{CoreError, Result};
use crate::image::{GrayImage, LungMask};
use crate::train::{self, EpochRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegTrainConfig {
    pub arch: SegArch,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            arch: SegArch::default(),
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 4,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if a.depth == 0 || a.base_width == 0 || a.input_size == 0 {
            return Err(CoreError::Config("segmenter depth, width and input size must be positive".into()));
        }
        if a.input_size % a.stride() != 0 {
            return Err(CoreError::Config(format!(
                "input size {} is not divisible by 2^{} = {}",
                a.input_size,
                a.depth,
                a.stride()
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("epochs, batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegManifest {
    pub kind: String,
    pub arch: SegArch,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_dice: f64,
}

/// Trained (or freshly initialised) segmenter.
pub struct Segmenter<T: Real> {
    pub net: ResUNet<T>,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_dice: f64,
}

impl<T: Real> Segmenter<T> {
    pub fn new(arch: SegArch, seed: u64) -> Self {
        let mut rng = debias_nn::seeded_rng(seed);
        Self {
            net: ResUNet::new(arch, &mut rng),
            seed,
            best_epoch: 0,
            best_dice: f64::NAN,
        }
    }

    pub fn arch(&self) -> SegArch {
        *self.net.arch()
    }

    /// Foreground probabilities at `input_size x input_size`.
    pub fn probabilities(&self, img: &GrayImage) -> Result<Vec<f32>> {
        let s = self.arch().input_size;
        let plane = train::unit_plane(img, s)?;
        let x: Tensor<T> = train::stack_planes(&[&plane], s, s);
        Ok(self.net.infer(&x).data().iter().map(|&z| sigmoid(z).to_f32().unwrap_or(0.0)).collect())
    }

    /// Thresholds at 0.5 and resizes back to the source dimensions.
    pub fn predict_mask(&self, img: &GrayImage) -> Result<LungMask> {
        let s = self.arch().input_size;
        let probs = self.probabilities(img)?;
        let small = LungMask::new(s, s, probs.iter().map(|&p| p > 0.5).collect())?;
        Ok(small.resize_nearest(img.width(), img.height()))
    }

    pub fn manifest(&self) -> SegManifest {
        SegManifest {
            kind: "resunet".into(),
            arch: self.arch(),
            seed: self.seed,
            best_epoch: self.best_epoch,
            best_dice: self.best_dice,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        train::save_checkpoint(dir, &self.net, &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: SegManifest = train::read_manifest(dir)?;
        if m.kind != "resunet" {
            return Err(CoreError::Config(format!("{} holds a `{}` model, not a segmenter", dir.display(), m.kind)));
        }
        let mut s = Self::new(m.arch, m.seed);
        train::load_weights(dir, &mut s.net)?;
        s.best_epoch = m.best_epoch;
        s.best_dice = m.best_dice;
        Ok(s)
    }
}

/// Free-function form of [`Segmenter::predict_mask`].
pub fn predict_mask<T: Real>(model: &Segmenter<T>, img: &GrayImage) -> Result<LungMask> {
    model.predict_mask(img)
}

/// Trains a residual U-Net with Dice loss, keeping the weights from the epoch
/// with the best mean validation Dice of the thresholded masks.
pub fn train_segmenter<T: Real>(
    pairs: &[(GrayImage, LungMask)],
    cfg: &SegTrainConfig,
) -> Result<(Segmenter<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(CoreError::arg(format!("need at least 2 image/mask pairs, got {}", pairs.len())));
    }
    for (i, (img, mask)) in pairs.iter().enumerate() {
        if img.dims() != mask.dims() {
            return Err(CoreError::arg(format!("pair {i}: image {:?} and mask {:?} differ", img.dims(), mask.dims())));
        }
    }
    let mut rng = debias_nn::seeded_rng(cfg.seed ^ 0x5e6);
    let (train_idx, val_idx) = train::holdout(pairs.len(), cfg.val_fraction, &mut rng)?;
    let s = cfg.arch.input_size;
    let inputs = pairs.iter().map(|(img, _)| train::unit_plane(img, s)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f32>> = pairs
        .iter()
        .map(|(_, m)| m.resize_nearest(s, s).bits().iter().map(|&b| b as u8 as f32).collect())
        .collect();

    let mut model = Segmenter::<T>::new(cfg.arch, cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in train::batches(&train_idx, cfg.batch_size, &mut rng) {
            let x: Tensor<T> = train::stack_planes(&batch.iter().map(|&i| inputs[i].as_slice()).collect::<Vec<_>>(), s, s);
            let y: Tensor<T> = train::stack_planes(&batch.iter().map(|&i| targets[i].as_slice()).collect::<Vec<_>>(), s, s);
            let logits = model.net.forward(&x);
            let (loss, grad) = dice_loss_with_logits(&logits, &y);
            model.net.backward(&grad);
            opt.step(&mut model.net);
            total += loss.to_f64().unwrap_or(f64::NAN) * batch.len() as f64;
        }
        let (mut val_loss, mut val_dice) = (0.0, 0.0);
        for &i in &val_idx {
            let x: Tensor<T> = train::stack_planes(&[&inputs[i]], s, s);
            let y: Tensor<T> = train::stack_planes(&[&targets[i]], s, s);
            let logits = model.net.infer(&x);
            val_loss += dice_loss_with_logits(&logits, &y).0.to_f64().unwrap_or(f64::NAN);
            let pred = LungMask::new(s, s, logits.data().iter().map(|&z| z > T::zero()).collect())?;
            let truth = LungMask::new(s, s, targets[i].iter().map(|&v| v > 0.5).collect())?;
            val_dice += dice(&pred, &truth)?;
        }
        let nv = val_idx.len() as f64;
        let (val_loss, val_dice) = (val_loss / nv, val_dice / nv);
        info!("seg epoch {epoch}: loss {:.4} val dice {val_dice:.4}", total / train_idx.len() as f64);
        history.push(EpochRecord {
            epoch,
            phase: 1,
            lr: cfg.learning_rate,
            train_loss: total / train_idx.len() as f64,
            val_loss,
            val_metric: Some(val_dice),
            train_metric: None,
        });
        if best.as_ref().is_none_or(|b| val_dice > b.0) {
            best = Some((val_dice, epoch, snapshot(&model.net)));
        }
    }
    let (best_dice, best_epoch, weights) = best.expect("at least one epoch");
    restore(&mut model.net, &weights);
    model.best_epoch = best_epoch;
    model.best_dice = best_dice;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn tiny() -> SegArch {
        SegArch { input_size: 32, depth: 2, base_width: 4 }
    }

    #[test]
    fn constant_head_gives_full_or_empty_mask() {
        let img = generate_phantom(&PhantomSpec::standard(48, 1)).unwrap().image;
        for (bias, expect_full) in [(5.0f32, true), (-5.0, false)] {
            let mut m = Segmenter::<f32>::new(tiny(), 3);
            let head = m.net.head_mut();
            head.weight.value.iter_mut().for_each(|w| *w = 0.0);
            head.bias.as_mut().unwrap().value[0] = bias;
            let mask = m.predict_mask(&img).unwrap();
            assert_eq!(mask.dims(), (48, 48));
            assert_eq!(mask.area(), if expect_full { 48 * 48 } else { 0 });
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SegTrainConfig { arch: SegArch { input_size: 48, depth: 5, base_width: 4 }, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CoreError::Config(_))));
        cfg.arch.input_size = 64;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn training_needs_two_pairs_and_a_nonempty_split() {
        let p = generate_phantom(&PhantomSpec::standard(32, 1)).unwrap();
        let cfg = SegTrainConfig { arch: tiny(), epochs: 1, val_fraction: 0.5, ..Default::default() };
        let one = vec![(p.image.clone(), p.mask.clone())];
        assert!(matches!(train_segmenter::<f32>(&one, &cfg), Err(CoreError::Argument(_))));
        assert!(matches!(train_segmenter::<f32>(&[], &cfg), Err(CoreError::Argument(_))));
        let bad = vec![(p.image.clone(), LungMask::empty(8, 8)), (p.image.clone(), p.mask.clone())];
        assert!(matches!(train_segmenter::<f32>(&bad, &cfg), Err(CoreError::Argument(_))));
    }

    #[test]
    fn checkpoint_is_best_dice_and_round_trips() {
        let pairs: Vec<_> = (0..6)
            .map(|s| {
                let p = generate_phantom(&PhantomSpec::standard(32, s)).unwrap();
                (p.image, p.mask)
            })
            .collect();
        let cfg = SegTrainConfig { arch: tiny(), epochs: 3, val_fraction: 0.34, seed: 4, ..Default::default() };
        let (model, hist) = train_segmenter::<f32>(&pairs, &cfg).unwrap();
        assert_eq!(hist.len(), 3);
        let best = hist.iter().map(|h| h.val_metric.unwrap()).fold(f64::MIN, f64::max);
        assert_eq!(model.best_dice, best);
        assert_eq!(hist[model.best_epoch - 1].val_metric, Some(best));

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = Segmenter::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.manifest(), model.manifest());
        assert_eq!(back.probabilities(&pairs[0].0).unwrap(), model.probabilities(&pairs[0].0).unwrap());
        let mask = back.predict_mask(&pairs[0].0).unwrap();
        assert!(mask.bits().len() == 32 * 32);
    }

    #[test]
    fn resunet_gradients() {
        use debias_nn::Tensor;
        let arch = SegArch { input_size: 8, depth: 2, base_width: 2 };
        let mut net = ResUNet::<f64>::new(arch, &mut debias_nn::seeded_rng(0));
        let x = Tensor::from_vec([2, 1, 8, 8], (0..128).map(|i| ((i as f64) * 0.37).sin()).collect());
        let probe: Vec<f64> = (0..128).map(|i| ((i * 5 % 7) as f64) / 3.0 - 1.0).collect();
        let out = net.forward(&x);
        assert_eq!(out.shape(), [2, 1, 8, 8]);
        let dx = net.backward(&Tensor::from_vec(out.shape(), probe.clone()));
        let loss = |net: &mut ResUNet<f64>, x: &Tensor<f64>| -> f64 {
            net.forward(x).data().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        for i in [0, 17, 63, 100] {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-6;
            let num = (loss(&mut net, &xp) - loss(&mut net, &xm)) / 2e-6;
            assert!((num - dx.data()[i]).abs() < 1e-4 * (1.0 + num.abs()), "{i}: {num} vs {}", dx.data()[i]);
        }
    }
}
