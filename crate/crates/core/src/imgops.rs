//! Classical image operators: global histogram equalization, masking, close
//! cropping and resampling.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::{GrayImage, LungMask};

/// Half-open bounding box: rows `row0..row1`, columns `col0..col1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.row0 <= other.row0 && self.col0 <= other.col0 && other.row1 <= self.row1 && other.col1 <= self.col1
    }
}

/// Global CDF equalization:
/// `out(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * (2^depth - 1))`.
///
/// An image with a single distinct intensity is returned unchanged.
pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    match equalization_lut(img) {
        Some(lut) => img.map_pixels(|v| lut[v as usize]),
        None => img.clone(),
    }
}

/// The lookup table `equalize_histogram` applies, or `None` for a flat image.
pub fn equalization_lut(img: &GrayImage) -> Option<Vec<u16>> {
    let levels = img.depth().levels();
    let mut hist = vec![0u64; levels];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    let n = img.pixels().len() as u64;
    let cdf_min = *hist.iter().find(|&&c| c > 0).expect("non-empty image");
    if cdf_min == n {
        return None;
    }
    let max = img.depth().max_value() as u64;
    let denom = n - cdf_min;
    let mut lut = vec![0u16; levels];
    let mut cdf = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        // integer round-half-up of (cdf - cdf_min) * max / denom; levels
        // absent from the image map like their nearest present predecessor
        let num = cdf.saturating_sub(cdf_min) * max;
        lut[v] = ((2 * num + denom) / (2 * denom)) as u16;
    }
    Some(lut)
}

/// Equalizes `img` and remaps `companion` (same depth) through the same table,
/// so a paired target stays aligned with its equalized input.
pub fn equalize_pair(img: &GrayImage, companion: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    if img.depth() != companion.depth() {
        return Err(CoreError::arg("paired images differ in bit depth"));
    }
    Ok(match equalization_lut(img) {
        Some(lut) => (img.map_pixels(|v| lut[v as usize]), companion.map_pixels(|v| lut[v as usize])),
        None => (img.clone(), companion.clone()),
    })
}

/// Largest absolute gap between the image's intensity CDF and the uniform CDF
/// `(v + 1) / 2^depth`, taken over every intensity level.
pub fn uniform_cdf_deviation(img: &GrayImage) -> f64 {
    let levels = img.depth().levels();
    let mut hist = vec![0u64; levels];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    let n = img.pixels().len() as f64;
    let mut cdf = 0u64;
    let mut worst = 0.0f64;
    for (v, &c) in hist.iter().enumerate() {
        cdf += c;
        let ideal = (v + 1) as f64 / levels as f64;
        worst = worst.max((cdf as f64 / n - ideal).abs());
    }
    worst
}

/// Keeps pixels under the mask and sets everything else to background (0).
pub fn apply_mask(img: &GrayImage, mask: &LungMask) -> Result<GrayImage> {
    if img.dims() != mask.dims() {
        return Err(CoreError::arg(format!(
            "image {:?} and mask {:?} differ in size",
            img.dims(),
            mask.dims()
        )));
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { v } else { 0 })
        .collect();
    GrayImage::new(img.width(), img.height(), img.depth(), pixels)
}

/// Tight bounding box of nonzero pixels, if any.
pub fn content_bbox(img: &GrayImage) -> Option<BBox> {
    bbox_of(img.width(), img.height(), |i| img.pixels()[i] != 0)
}

pub fn mask_bbox(mask: &LungMask) -> Option<BBox> {
    bbox_of(mask.width(), mask.height(), |i| mask.bits()[i])
}

fn bbox_of(width: usize, height: usize, on: impl Fn(usize) -> bool) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for r in 0..height {
        for c in 0..width {
            if on(r * width + c) {
                let bb = b.get_or_insert(BBox {
                    row0: r,
                    col0: c,
                    row1: r + 1,
                    col1: c + 1,
                });
                bb.row0 = bb.row0.min(r);
                bb.col0 = bb.col0.min(c);
                bb.row1 = bb.row1.max(r + 1);
                bb.col1 = bb.col1.max(c + 1);
            }
        }
    }
    b
}

pub fn crop(img: &GrayImage, bbox: BBox) -> Result<GrayImage> {
    if bbox.row1 > img.height() || bbox.col1 > img.width() || bbox.row0 >= bbox.row1 || bbox.col0 >= bbox.col1 {
        return Err(CoreError::arg(format!("bbox {bbox:?} outside image {:?}", img.dims())));
    }
    let mut px = Vec::with_capacity(bbox.width() * bbox.height());
    for r in bbox.row0..bbox.row1 {
        px.extend_from_slice(&img.pixels()[r * img.width() + bbox.col0..r * img.width() + bbox.col1]);
    }
    GrayImage::new(bbox.width(), bbox.height(), img.depth(), px)
}

/// Crops to the tight box around nonzero pixels so that every border row and
/// column of the result holds at least one nonzero pixel.
pub fn close_crop(img: &GrayImage) -> Result<(GrayImage, BBox)> {
    let bbox = content_bbox(img).ok_or(CoreError::EmptyContent)?;
    Ok((crop(img, bbox)?, bbox))
}

/// Bilinear resampling with corner-aligned sampling: output pixel `i` reads
/// source coordinate `i * (in - 1) / (out - 1)`, so the corner pixels map
/// exactly onto each other. A length-1 output samples the source centre.
pub fn resize(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(CoreError::arg("resize target must be positive"));
    }
    if (width, height) == img.dims() {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width(), width);
    let ys = sample_positions(img.height(), height);
    let src = img.pixels();
    let iw = img.width();
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |r: usize, c: usize| src[r * iw + c] as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy).round() as u16);
        }
    }
    GrayImage::new(width, height, img.depth(), out)
}

fn sample_positions(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let s = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (s.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Pads to a square with background (0), content centred.
pub fn letterbox(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    if w == h {
        return img.clone();
    }
    let side = w.max(h);
    let (ox, oy) = ((side - w) / 2, (side - h) / 2);
    let mut px = vec![0u16; side * side];
    for r in 0..h {
        px[(r + oy) * side + ox..(r + oy) * side + ox + w].copy_from_slice(&img.pixels()[r * w..(r + 1) * w]);
    }
    GrayImage::new(side, side, img.depth(), px).expect("square image")
}

/// Letterbox to a square, then resample to `size x size`.
pub fn letterbox_resize(img: &GrayImage, size: usize) -> Result<GrayImage> {
    resize(&letterbox(img), size, size)
}
