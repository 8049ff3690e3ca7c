//! Pieces shared by the three training loops.

use debias_nn::{Real, SeedRng, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::imgops;

/// One epoch of a training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub phase: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Task metric on the validation split (Dice for segmentation).
    pub val_metric: Option<f64>,
    /// Task metric accumulated over the epoch's training batches.
    #[serde(default)]
    pub train_metric: Option<f64>,
}

/// Splits `0..n` into `(train, val)` with `round(n * fraction)` validation items.
pub(crate) fn holdout(n: usize, fraction: f64, rng: &mut SeedRng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CoreError::arg(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(CoreError::arg(format!(
            "{n} samples with validation fraction {fraction} leaves an empty split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Shuffled minibatches of `items`.
pub(crate) fn batches(items: &[usize], size: usize, rng: &mut SeedRng) -> Vec<Vec<usize>> {
    let mut order = items.to_vec();
    order.shuffle(rng);
    order.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Resizes to `size x size` and scales to `[0, 1]`.
pub(crate) fn unit_plane(img: &GrayImage, size: usize) -> Result<Vec<f32>> {
    let resized = if img.dims() == (size, size) {
        img.clone()
    } else {
        imgops::resize(img, size, size)?
    };
    Ok(resized.to_unit())
}

/// Stacks single-channel planes into an `[n, 1, h, w]` tensor.
pub(crate) fn stack_planes<T: Real>(planes: &[&[f32]], h: usize, w: usize) -> Tensor<T> {
    let data = planes.iter().flat_map(|p| p.iter().map(|&v| T::lit(v as f64))).collect();
    Tensor::from_vec([planes.len(), 1, h, w], data)
}

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const MANIFEST_FILE: &str = "model.json";

/// Writes `dir/model.safetensors` and `dir/model.json`.
pub(crate) fn save_checkpoint<T: Real, L: debias_nn::Layer<T> + ?Sized, M: Serialize>(
    dir: &std::path::Path,
    model: &L,
    manifest: &M,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    debias_nn::save_params(model, &dir.join(WEIGHTS_FILE))?;
    let json = serde_json::to_string_pretty(manifest)?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, json + "\n").map_err(|e| CoreError::io(&path, e))
}

pub(crate) fn read_manifest<M: serde::de::DeserializeOwned>(dir: &std::path::Path) -> Result<M> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn load_weights<T: Real, L: debias_nn::Layer<T> + ?Sized>(dir: &std::path::Path, model: &mut L) -> Result<()> {
    debias_nn::load_params(model, &dir.join(WEIGHTS_FILE), true)?;
    Ok(())
}
