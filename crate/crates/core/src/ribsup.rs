//! Convolutional rib suppression: a stride-1 conv stack mapping a radiograph to
//! its soft-tissue counterpart.

use std::path::Path;

use debias_nn::layers::{Conv2d, Relu, Residual};
use debias_nn::loss::{mse, ssim_loss};
use debias_nn::{restore, snapshot, Adam, Layer, Real, Sequential, Tensor};
use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::train::{self, EpochRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppLoss {
    Mse,
    MsePlusStructural,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppArch {
    /// Number of conv layers.
    pub depth: usize,
    pub width: usize,
    pub kernel: usize,
    /// Predict a correction added to the input rather than the output itself.
    pub residual: bool,
}

impl Default for SuppArch {
    fn default() -> Self {
        Self {
            depth: 6,
            width: 16,
            kernel: 5,
            residual: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppressorTrainConfig {
    pub arch: SuppArch,
    /// Training resolution; inference runs at native size.
    pub input_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: SuppLoss,
    /// Weight of the `1 - SSIM` term.
    pub ssim_weight: f64,
    pub ssim_window: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SuppressorTrainConfig {
    fn default() -> Self {
        Self {
            arch: SuppArch::default(),
            input_size: 512,
            epochs: 40,
            learning_rate: 1e-3,
            batch_size: 4,
            loss: SuppLoss::MsePlusStructural,
            ssim_weight: 0.1,
            ssim_window: 7,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SuppressorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if self.input_size == 0 || a.depth < 2 || a.width == 0 || a.kernel % 2 == 0 {
            return Err(CoreError::Config(
                "suppressor needs input size > 0, depth >= 2, width > 0 and an odd kernel".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || self.ssim_weight < 0.0 {
            return Err(CoreError::Config("epochs, batch size, learning rate must be positive".into()));
        }
        if self.loss == SuppLoss::MsePlusStructural && self.ssim_window > self.input_size {
            return Err(CoreError::Config("SSIM window exceeds the training size".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuppManifest {
    pub kind: String,
    pub arch: SuppArch,
    pub input_size: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

enum Net<T: Real> {
    Plain(Sequential<T>),
    Residual(Residual<T>),
}

pub struct Suppressor<T: Real> {
    arch: SuppArch,
    net: Net<T>,
    pub input_size: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl<T: Real> Suppressor<T> {
    pub fn new(arch: SuppArch, input_size: usize, seed: u64) -> Self {
        let mut rng = debias_nn::seeded_rng(seed);
        let mut body = Sequential::new();
        for l in 0..arch.depth {
            let cin = if l == 0 { 1 } else { arch.width };
            let cout = if l + 1 == arch.depth { 1 } else { arch.width };
            let mut conv = Conv2d::same(&format!("conv{l}"), cin, cout, arch.kernel, &mut rng);
            if l + 1 == arch.depth && arch.residual {
                // start from the identity map
                conv.weight.value.iter_mut().for_each(|w| *w = T::zero());
            }
            body.push(conv);
            if l + 1 < arch.depth {
                body.push(Relu::new());
            }
        }
        let net = if arch.residual {
            Net::Residual(Residual::new(body, None))
        } else {
            Net::Plain(body)
        };
        Self {
            arch,
            net,
            input_size,
            seed,
            best_epoch: 0,
            best_val_loss: f64::NAN,
        }
    }

    pub fn arch(&self) -> SuppArch {
        self.arch
    }

    fn layer(&self) -> &dyn Layer<T> {
        match &self.net {
            Net::Plain(s) => s,
            Net::Residual(r) => r,
        }
    }

    fn layer_mut(&mut self) -> &mut dyn Layer<T> {
        match &mut self.net {
            Net::Plain(s) => s,
            Net::Residual(r) => r,
        }
    }

    /// Runs at the image's native size; output keeps depth and dimensions and
    /// is clipped to the valid range.
    pub fn suppress(&self, img: &GrayImage) -> Result<GrayImage> {
        let (w, h) = img.dims();
        let plane = img.to_unit();
        let x: Tensor<T> = train::stack_planes(&[&plane], h, w);
        let y = self.layer().infer(&x);
        let out: Vec<f32> = y.data().iter().map(|v| v.to_f32().unwrap_or(0.0).clamp(0.0, 1.0)).collect();
        GrayImage::from_unit(w, h, img.depth(), &out)
    }

    pub fn manifest(&self) -> SuppManifest {
        SuppManifest {
            kind: "suppressor".into(),
            arch: self.arch,
            input_size: self.input_size,
            seed: self.seed,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        train::save_checkpoint(dir, self.layer(), &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: SuppManifest = train::read_manifest(dir)?;
        if m.kind != "suppressor" {
            return Err(CoreError::Config(format!("{} holds a `{}` model, not a suppressor", dir.display(), m.kind)));
        }
        let mut s = Self::new(m.arch, m.input_size, m.seed);
        train::load_weights(dir, s.layer_mut())?;
        s.best_epoch = m.best_epoch;
        s.best_val_loss = m.best_val_loss;
        Ok(s)
    }
}

pub fn suppress_bones<T: Real>(model: &Suppressor<T>, img: &GrayImage) -> Result<GrayImage> {
    model.suppress(img)
}

fn loss_and_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &SuppressorTrainConfig) -> (f64, Tensor<T>) {
    let (l, mut g) = mse(pred, target);
    let mut loss = l.to_f64().unwrap_or(f64::NAN);
    if cfg.loss == SuppLoss::MsePlusStructural && cfg.ssim_weight > 0.0 {
        let (ls, gs) = ssim_loss(pred, target, cfg.ssim_window);
        let wt = T::lit(cfg.ssim_weight);
        for (a, &b) in g.data_mut().iter_mut().zip(gs.data()) {
            *a += wt * b;
        }
        loss += cfg.ssim_weight * ls.to_f64().unwrap_or(f64::NAN);
    }
    (loss, g)
}

/// Trains on `(original, bone_suppressed)` pairs and keeps the weights with the
/// lowest validation loss.
pub fn train_suppressor<T: Real>(
    pairs: &[(GrayImage, GrayImage)],
    cfg: &SuppressorTrainConfig,
) -> Result<(Suppressor<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if pairs.len() < 2 {
        return Err(CoreError::arg(format!("need at least 2 image pairs, got {}", pairs.len())));
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        if a.dims() != b.dims() {
            return Err(CoreError::arg(format!("pair {i} is misaligned: {:?} vs {:?}", a.dims(), b.dims())));
        }
    }
    let s = cfg.input_size;
    let mut rng = debias_nn::seeded_rng(cfg.seed ^ 0xb0e);
    let (train_idx, val_idx) = train::holdout(pairs.len(), cfg.val_fraction, &mut rng)?;
    let inputs = pairs.iter().map(|p| train::unit_plane(&p.0, s)).collect::<Result<Vec<_>>>()?;
    let targets = pairs.iter().map(|p| train::unit_plane(&p.1, s)).collect::<Result<Vec<_>>>()?;
    let tensor = |planes: &[Vec<f32>], idx: &[usize]| -> Tensor<T> {
        train::stack_planes(&idx.iter().map(|&i| planes[i].as_slice()).collect::<Vec<_>>(), s, s)
    };

    let mut model = Suppressor::<T>::new(cfg.arch, s, cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in train::batches(&train_idx, cfg.batch_size, &mut rng) {
            let (x, y) = (tensor(&inputs, &batch), tensor(&targets, &batch));
            let net = model.layer_mut();
            let pred = net.forward(&x);
            let (loss, grad) = loss_and_grad(&pred, &y, cfg);
            net.backward(&grad);
            opt.step(net);
            total += loss * batch.len() as f64;
        }
        let mut val = 0.0;
        for &i in &val_idx {
            let pred = model.layer().infer(&tensor(&inputs, &[i]));
            val += loss_and_grad(&pred, &tensor(&targets, &[i]), cfg).0;
        }
        let val = val / val_idx.len() as f64;
        let train_loss = total / train_idx.len() as f64;
        info!("ribsup epoch {epoch}: loss {train_loss:.5} val {val:.5}");
        history.push(EpochRecord {
            epoch,
            phase: 1,
            lr: cfg.learning_rate,
            train_loss,
            val_loss: val,
            val_metric: None,
            train_metric: None,
        });
        if best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, epoch, snapshot(model.layer())));
        }
    }
    let (best_val_loss, best_epoch, weights) = best.expect("at least one epoch");
    restore(model.layer_mut(), &weights);
    model.best_epoch = best_epoch;
    model.best_val_loss = best_val_loss;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::BitDepth;
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn small_cfg() -> SuppressorTrainConfig {
        SuppressorTrainConfig {
            arch: SuppArch { depth: 3, width: 4, kernel: 3, residual: true },
            input_size: 32,
            epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_residual_model_is_identity() {
        let m = Suppressor::<f32>::new(SuppArch::default(), 64, 1);
        let img = generate_phantom(&PhantomSpec::standard(40, 2)).unwrap().image;
        assert_eq!(m.suppress(&img).unwrap(), img);
    }

    #[test]
    fn output_is_clipped_and_keeps_geometry() {
        let arch = SuppArch { residual: false, ..Default::default() };
        let m = Suppressor::<f32>::new(arch, 64, 5);
        for depth in [BitDepth::Eight, BitDepth::Twelve] {
            let max = depth.max_value();
            let img = GrayImage::new(24, 17, depth, (0..24 * 17).map(|i| (i * 37 % (max as usize + 1)) as u16).collect()).unwrap();
            let out = m.suppress(&img).unwrap();
            assert_eq!((out.dims(), out.depth()), (img.dims(), depth));
            assert!(out.pixels().iter().all(|&v| v <= max));
        }
    }

    #[test]
    fn argument_errors() {
        let cfg = small_cfg();
        assert!(matches!(train_suppressor::<f32>(&[], &cfg), Err(CoreError::Argument(_))));
        let a = GrayImage::filled(32, 32, BitDepth::Eight, 3).unwrap();
        let b = GrayImage::filled(16, 32, BitDepth::Eight, 3).unwrap();
        let bad = vec![(a.clone(), b), (a.clone(), a.clone())];
        assert!(matches!(train_suppressor::<f32>(&bad, &cfg), Err(CoreError::Argument(_))));
    }

    #[test]
    fn identity_task_beats_zero_baseline() {
        let pairs: Vec<_> = (0..6)
            .map(|s| {
                let img = generate_phantom(&PhantomSpec::standard(32, s)).unwrap().image;
                (img.clone(), img)
            })
            .collect();
        let (model, hist) = train_suppressor::<f32>(&pairs, &small_cfg()).unwrap();
        let zero = pairs.iter().map(|p| p.1.to_unit().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / 1024.0).sum::<f64>() / 6.0;
        let best = hist.iter().map(|h| h.val_loss).fold(f64::MAX, f64::min);
        assert_eq!(model.best_val_loss, best);
        assert!(best <= zero);

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = Suppressor::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.suppress(&pairs[0].0).unwrap(), model.suppress(&pairs[0].0).unwrap());
    }
}
