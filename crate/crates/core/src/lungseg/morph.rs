//! Binary morphology, hole filling and mask quality control.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::LungMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRepairParams {
    pub closing_kernel: usize,
    /// Enclosed background components smaller than this fraction of the image are filled.
    pub min_hole_area_fraction: f64,
}

impl Default for MaskRepairParams {
    fn default() -> Self {
        Self {
            closing_kernel: 8,
            min_hole_area_fraction: 1.0 / 16.0,
        }
    }
}

/// Image edge length the default closing kernel is sized for.
pub const REPAIR_REFERENCE_SIZE: usize = 512;

impl MaskRepairParams {
    /// Defaults with the closing kernel scaled from the reference size to
    /// `size` pixels, so the two lung fields do not merge at low resolution.
    pub fn scaled_to(size: usize) -> Self {
        let d = Self::default();
        let k = (d.closing_kernel as f64 * size as f64 / REPAIR_REFERENCE_SIZE as f64).round() as usize;
        Self { closing_kernel: k.max(1), ..d }
    }

    pub fn new(closing_kernel: usize, min_hole_area_fraction: f64) -> Result<Self> {
        let p = Self {
            closing_kernel,
            min_hole_area_fraction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.closing_kernel == 0 {
            return Err(CoreError::Config("closing kernel must be at least 1".into()));
        }
        if !(self.min_hole_area_fraction > 0.0 && self.min_hole_area_fraction < 1.0) {
            return Err(CoreError::Config(format!(
                "hole area fraction {} outside (0, 1)",
                self.min_hole_area_fraction
            )));
        }
        Ok(())
    }
}

/// One pass of a 1-D max (dilate) or min (erode) filter along rows or
/// columns. The window covers offsets `-k/2 ..= k - 1 - k/2`; for dilation the
/// window is reflected. Out-of-image samples count as `outside`.
fn filter_1d(bits: &[bool], w: usize, h: usize, k: usize, along_rows: bool, dilate: bool) -> Vec<bool> {
    let lo = (k / 2) as isize;
    let hi = (k - 1 - k / 2) as isize;
    // dilation by S reads p - o; erosion reads p + o
    let (a, b) = if dilate { (-hi, lo) } else { (-lo, hi) };
    let outside = !dilate;
    let (len, lines) = if along_rows { (w, h) } else { (h, w) };
    let at = |line: usize, i: usize| if along_rows { line * w + i } else { i * w + line };
    let mut out = vec![false; bits.len()];
    for line in 0..lines {
        for i in 0..len {
            let mut acc = !dilate;
            for d in a..=b {
                let j = i as isize + d;
                let v = if j < 0 || j >= len as isize { outside } else { bits[at(line, j as usize)] };
                if dilate {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            out[at(line, i)] = acc;
        }
    }
    out
}

fn square(mask: &LungMask, k: usize, dilate: bool) -> LungMask {
    let (w, h) = mask.dims();
    let rows = filter_1d(mask.bits(), w, h, k, true, dilate);
    let both = filter_1d(&rows, w, h, k, false, dilate);
    LungMask::new(w, h, both).expect("same dims")
}

pub fn dilate(mask: &LungMask, k: usize) -> LungMask {
    square(mask, k, true)
}

/// Pixels beyond the border count as foreground, so erosion never eats in from the edge.
pub fn erode(mask: &LungMask, k: usize) -> LungMask {
    square(mask, k, false)
}

/// Closing with a `k x k` square: dilation then erosion.
pub fn close(mask: &LungMask, k: usize) -> LungMask {
    erode(&dilate(mask, k), k)
}

/// Connected components of pixels equal to `value`, as lists of indices.
pub fn components(mask: &LungMask, value: bool, eight: bool) -> Vec<Vec<usize>> {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut seen = vec![false; bits.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if seen[start] || bits[start] != value {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if !seen[q] && bits[q] == value {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Fills 4-connected background components that do not touch the border and
/// have fewer than `max_area` pixels.
pub fn fill_holes(mask: &LungMask, max_area: f64) -> LungMask {
    let (w, h) = mask.dims();
    let mut bits = mask.bits().to_vec();
    for comp in components(mask, false, false) {
        let touches = comp.iter().any(|&p| {
            let (r, c) = (p / w, p % w);
            r == 0 || c == 0 || r == h - 1 || c == w - 1
        });
        if !touches && (comp.len() as f64) < max_area {
            comp.into_iter().for_each(|p| bits[p] = true);
        }
    }
    LungMask::new(w, h, bits).expect("same dims")
}

/// Closing followed by small-hole filling.
pub fn repair_mask(mask: &LungMask, params: &MaskRepairParams) -> LungMask {
    let closed = close(mask, params.closing_kernel.max(1));
    let (w, h) = mask.dims();
    fill_holes(&closed, params.min_hole_area_fraction * (w * h) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcReason {
    Ok,
    TooFewContours,
    PoorSingleLung,
}

impl QcReason {
    pub fn as_str(self) -> &'static str {
        match self {
            QcReason::Ok => "ok",
            QcReason::TooFewContours => "too_few_contours",
            QcReason::PoorSingleLung => "poor_single_lung",
        }
    }
}

impl std::str::FromStr for QcReason {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        [QcReason::Ok, QcReason::TooFewContours, QcReason::PoorSingleLung]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| CoreError::arg(format!("unknown QC reason `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcResult {
    pub accepted: bool,
    pub reason: QcReason,
}

pub const DEFAULT_QC_RATIO: f64 = 0.25;

/// Accepts a mask with at least two 8-connected foreground components whose
/// second-largest area is at least `min_secondary_ratio` of the largest.
pub fn qc_mask(mask: &LungMask, min_secondary_ratio: f64) -> QcResult {
    let mut areas: Vec<usize> = components(mask, true, true).iter().map(Vec::len).collect();
    let reject = |reason| QcResult { accepted: false, reason };
    if areas.len() < 2 {
        return reject(QcReason::TooFewContours);
    }
    areas.sort_unstable_by(|a, b| b.cmp(a));
    if (areas[1] as f64) / (areas[0] as f64) < min_secondary_ratio {
        return reject(QcReason::PoorSingleLung);
    }
    QcResult {
        accepted: true,
        reason: QcReason::Ok,
    }
}
