//! Grayscale rasters and binary masks, plus their PNG encodings.

use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Bits per sample of a [`GrayImage`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Twelve,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Twelve => 12,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u16 {
        ((1u32 << self.bits()) - 1) as u16
    }

    pub fn levels(self) -> usize {
        1usize << self.bits()
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            12 => Ok(BitDepth::Twelve),
            16 => Ok(BitDepth::Sixteen),
            b => Err(CoreError::arg(format!("unsupported bit depth {b}"))),
        }
    }
}

/// Single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    depth: BitDepth,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, depth: BitDepth, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CoreError::arg(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(CoreError::arg(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        let max = depth.max_value();
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &v)| v > max) {
            return Err(CoreError::CorruptSample {
                index,
                value: value as u32,
                max: max as u32,
            });
        }
        Ok(Self {
            width,
            height,
            depth,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, depth: BitDepth, value: u16) -> Result<Self> {
        Self::new(width, height, depth, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    /// Applies `f` to every pixel, clamping results into the valid range.
    pub fn map_pixels(&self, f: impl Fn(u16) -> u16) -> Self {
        let max = self.depth.max_value();
        Self {
            pixels: self.pixels.iter().map(|&v| f(v).min(max)).collect(),
            ..self.clone()
        }
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        let max = self.depth.max_value() as f32;
        self.pixels.iter().map(|&v| v as f32 / max).collect()
    }

    /// Inverse of [`GrayImage::to_unit`], rounding and clipping.
    pub fn from_unit(width: usize, height: usize, depth: BitDepth, values: &[f32]) -> Result<Self> {
        let max = depth.max_value() as f32;
        let pixels = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * max).round() as u16)
            .collect();
        Self::new(width, height, depth, pixels)
    }

    /// Rescales intensities to another depth (`v * new_max / old_max`, rounded).
    pub fn convert_depth(&self, depth: BitDepth) -> Self {
        if depth == self.depth {
            return self.clone();
        }
        let (from, to) = (self.depth.max_value() as u64, depth.max_value() as u64);
        Self {
            depth,
            pixels: self
                .pixels
                .iter()
                .map(|&v| ((v as u64 * to + from / 2) / from) as u16)
                .collect(),
            ..self.clone()
        }
    }

    /// Loads an 8- or 16-bit grayscale PNG. 16-bit files load at depth 16.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => CoreError::io(path, io),
            other => CoreError::Image(other),
        })?;
        match img {
            image::DynamicImage::ImageLuma16(buf) => {
                let (w, h) = buf.dimensions();
                Self::new(w as usize, h as usize, BitDepth::Sixteen, buf.into_raw())
            }
            other => {
                let buf = other.into_luma8();
                let (w, h) = buf.dimensions();
                let px = buf.into_raw().into_iter().map(u16::from).collect();
                Self::new(w as usize, h as usize, BitDepth::Eight, px)
            }
        }
    }

    /// Depth-8 images are written as 8-bit PNG, anything else as 16-bit.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.depth == BitDepth::Eight {
            let raw: Vec<u8> = self.pixels.iter().map(|&v| v as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer size")
                .save(path)
        } else {
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, self.pixels.clone())
                .expect("buffer size")
                .save(path)
        };
        res.map_err(|e| match e {
            image::ImageError::IoError(io) => CoreError::io(path, io),
            other => CoreError::Image(other),
        })
    }
}

/// Binary lung-field mask aligned with an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LungMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl LungMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(CoreError::arg(format!(
                "mask of {} bits cannot be {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height]).expect("positive dims")
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height]).expect("positive dims")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(width, height, bits).expect("positive dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Nearest-neighbour resampling (pixel-centre convention).
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |r, c| {
            let sr = ((r as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sc = ((c as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            self.get(sr.min(self.height - 1), sc.min(self.width - 1))
        })
    }

    /// Any nonzero pixel is foreground.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = GrayImage::load_png(path)?;
        Self::new(img.width, img.height, img.pixels.iter().map(|&v| v != 0).collect())
    }

    /// Written as 8-bit PNG with values {0, 255}.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save_png(path)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            BitDepth::Eight,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("valid mask image")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_sizes() {
        assert!(matches!(
            GrayImage::new(2, 1, BitDepth::Twelve, vec![4096, 0]),
            Err(CoreError::CorruptSample { index: 0, .. })
        ));
        assert!(GrayImage::new(2, 2, BitDepth::Eight, vec![0; 3]).is_err());
        assert!(GrayImage::new(0, 2, BitDepth::Eight, vec![]).is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(3, 2, BitDepth::Eight, vec![0, 10, 255, 7, 8, 9]).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(GrayImage::load_png(&p).unwrap(), img);

        let deep = GrayImage::new(2, 1, BitDepth::Sixteen, vec![65535, 1234]).unwrap();
        let p16 = dir.path().join("b.png");
        deep.save_png(&p16).unwrap();
        assert_eq!(GrayImage::load_png(&p16).unwrap(), deep);

        let mask = LungMask::from_fn(4, 3, |r, c| r == c);
        let pm = dir.path().join("m.png");
        mask.save_png(&pm).unwrap();
        assert_eq!(LungMask::load_png(&pm).unwrap(), mask);
    }

    #[test]
    fn depth_conversion() {
        let img = GrayImage::new(3, 1, BitDepth::Twelve, vec![0, 2048, 4095]).unwrap();
        assert_eq!(img.convert_depth(BitDepth::Eight).pixels(), &[0, 128, 255]);
    }
}
