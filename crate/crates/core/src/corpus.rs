//! Dataset ingest: JSRT raw files, single-frame DICOM, manifest CSVs and
//! stratified fold assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dicom_dictionary_std::tags;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::{BitDepth, GrayImage};
use crate::imgops;

// ---------------------------------------------------------------------------
// JSRT raw

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawOptions {
    /// JSRT raw files store inverted intensities; `true` maps `v -> 4095 - v`.
    pub invert: bool,
}

impl Default for RawOptions {
    fn default() -> Self {
        Self { invert: true }
    }
}

/// Decodes a headerless big-endian 16-bit file holding 12-bit samples.
pub fn read_jsrt_raw(path: &Path, width: usize, height: usize, opts: RawOptions) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_jsrt_raw(&bytes, width, height, opts).map_err(|e| match e {
        CoreError::MalformedFile { reason, .. } => CoreError::MalformedFile {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn decode_jsrt_raw(bytes: &[u8], width: usize, height: usize, opts: RawOptions) -> Result<GrayImage> {
    let expected = width * height * 2;
    if bytes.len() != expected {
        return Err(CoreError::MalformedFile {
            path: PathBuf::new(),
            reason: format!("expected {expected} bytes for {width}x{height}, found {}", bytes.len()),
        });
    }
    let max = BitDepth::Twelve.max_value();
    let mut pixels = Vec::with_capacity(width * height);
    for (index, pair) in bytes.chunks_exact(2).enumerate() {
        let v = u16::from_be_bytes([pair[0], pair[1]]);
        if v > max {
            return Err(CoreError::CorruptSample {
                index,
                value: v as u32,
                max: max as u32,
            });
        }
        pixels.push(if opts.invert { max - v } else { v });
    }
    GrayImage::new(width, height, BitDepth::Twelve, pixels)
}

/// Inverse of [`decode_jsrt_raw`] for 12-bit images.
pub fn encode_jsrt_raw(img: &GrayImage, opts: RawOptions) -> Result<Vec<u8>> {
    if img.depth() != BitDepth::Twelve {
        return Err(CoreError::arg("JSRT raw encoding requires a 12-bit image"));
    }
    let max = BitDepth::Twelve.max_value();
    Ok(img
        .pixels()
        .iter()
        .flat_map(|&v| (if opts.invert { max - v } else { v }).to_be_bytes())
        .collect())
}

// ---------------------------------------------------------------------------
// DICOM

const NATIVE_LE: [&str; 2] = ["1.2.840.10008.1.2", "1.2.840.10008.1.2.1"];

fn ingest_err(path: &Path, reason: impl Into<String>) -> CoreError {
    CoreError::Ingest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a single-frame grayscale DICOM and produces a `target x target`
/// 8-bit image.
///
/// Stored values pass through the modality rescale, are clamped to the first
/// VOI window when one is present (otherwise the stored min..max is used), are
/// min-max mapped onto 0..=255, letterboxed to a square and resampled.
pub fn convert_dicom(path: &Path, target_size: usize) -> Result<GrayImage> {
    if target_size == 0 {
        return Err(CoreError::arg("target size must be positive"));
    }
    let obj = dicom_object::open_file(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let ts = obj.meta().transfer_syntax().trim_end_matches('\0').to_string();
    if !NATIVE_LE.contains(&ts.as_str()) {
        return Err(ingest_err(path, format!("unsupported transfer syntax {ts}")));
    }
    let int = |tag, name: &str| -> Result<i64> {
        obj.element(tag)
            .map_err(|_| ingest_err(path, format!("missing {name}")))?
            .to_int::<i64>()
            .map_err(|e| ingest_err(path, format!("bad {name}: {e}")))
    };
    let opt_f64 = |tag| -> Option<f64> {
        obj.element_opt(tag).ok().flatten().and_then(|e| e.to_multi_float64().ok()).and_then(|v| v.first().copied())
    };
    let rows = int(tags::ROWS, "Rows")? as usize;
    let cols = int(tags::COLUMNS, "Columns")? as usize;
    let samples = obj
        .element_opt(tags::SAMPLES_PER_PIXEL)
        .ok()
        .flatten()
        .and_then(|e| e.to_int::<i64>().ok())
        .unwrap_or(1);
    if samples != 1 {
        return Err(ingest_err(path, format!("{samples} samples per pixel; only grayscale is supported")));
    }
    let frames = obj
        .element_opt(tags::NUMBER_OF_FRAMES)
        .ok()
        .flatten()
        .and_then(|e| e.to_str().ok().and_then(|s| s.trim().parse::<i64>().ok()))
        .unwrap_or(1);
    if frames != 1 {
        return Err(ingest_err(path, format!("{frames} frames; only single-frame files are supported")));
    }
    let bits_allocated = int(tags::BITS_ALLOCATED, "BitsAllocated")?;
    let signed = obj
        .element_opt(tags::PIXEL_REPRESENTATION)
        .ok()
        .flatten()
        .and_then(|e| e.to_int::<i64>().ok())
        .unwrap_or(0)
        == 1;
    let photometric = obj
        .element_opt(tags::PHOTOMETRIC_INTERPRETATION)
        .ok()
        .flatten()
        .and_then(|e| e.to_str().ok().map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "MONOCHROME2".into());
    if photometric != "MONOCHROME1" && photometric != "MONOCHROME2" {
        return Err(ingest_err(path, format!("photometric interpretation {photometric} is not grayscale")));
    }
    let bytes = obj
        .element(tags::PIXEL_DATA)
        .map_err(|_| ingest_err(path, "missing PixelData"))?
        .to_bytes()
        .map_err(|e| ingest_err(path, format!("unreadable PixelData: {e}")))?;
    let n = rows * cols;
    let raw: Vec<f64> = match bits_allocated {
        8 if bytes.len() >= n => bytes[..n]
            .iter()
            .map(|&b| if signed { b as i8 as f64 } else { b as f64 })
            .collect(),
        16 if bytes.len() >= 2 * n => bytes[..2 * n]
            .chunks_exact(2)
            .map(|c| {
                let v = u16::from_le_bytes([c[0], c[1]]);
                if signed {
                    v as i16 as f64
                } else {
                    v as f64
                }
            })
            .collect(),
        8 | 16 => return Err(ingest_err(path, "PixelData shorter than Rows x Columns")),
        b => return Err(ingest_err(path, format!("unsupported BitsAllocated {b}"))),
    };
    let slope = opt_f64(tags::RESCALE_SLOPE).unwrap_or(1.0);
    let intercept = opt_f64(tags::RESCALE_INTERCEPT).unwrap_or(0.0);
    let values: Vec<f64> = raw.iter().map(|v| v * slope + intercept).collect();

    let window = match (opt_f64(tags::WINDOW_CENTER), opt_f64(tags::WINDOW_WIDTH)) {
        (Some(c), Some(w)) if w > 0.0 => Some((c - w / 2.0, c + w / 2.0)),
        _ => None,
    };
    let (lo, hi) = window.unwrap_or_else(|| {
        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    });
    let span = hi - lo;
    let mut pixels: Vec<u16> = values
        .iter()
        .map(|&v| {
            if span <= 0.0 {
                0
            } else {
                ((v.clamp(lo, hi) - lo) / span * 255.0).round() as u16
            }
        })
        .collect();
    if photometric == "MONOCHROME1" {
        pixels.iter_mut().for_each(|v| *v = 255 - *v);
    }
    let img = GrayImage::new(cols, rows, BitDepth::Eight, pixels)?;
    imgops::letterbox_resize(&img, target_size)
}

/// Writes an uncompressed (explicit VR little endian) single-frame
/// MONOCHROME2 DICOM with 16-bit allocation.
pub fn write_gray_dicom(path: &Path, width: usize, height: usize, pixels: &[u16], bits_stored: u16) -> Result<()> {
    use dicom_core::{DataElement, PrimitiveValue, VR};
    use dicom_object::{FileMetaTableBuilder, InMemDicomObject};

    if pixels.len() != width * height {
        return Err(CoreError::arg("pixel count does not match dimensions"));
    }
    let mut obj = InMemDicomObject::new_empty();
    let us = |v: u16| PrimitiveValue::from(v);
    obj.put(DataElement::new(tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from("1.2.840.10008.5.1.4.1.1.1.1")));
    obj.put(DataElement::new(tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from("2.25.1")));
    obj.put(DataElement::new(tags::SAMPLES_PER_PIXEL, VR::US, us(1)));
    obj.put(DataElement::new(tags::PHOTOMETRIC_INTERPRETATION, VR::CS, PrimitiveValue::from("MONOCHROME2")));
    obj.put(DataElement::new(tags::ROWS, VR::US, us(height as u16)));
    obj.put(DataElement::new(tags::COLUMNS, VR::US, us(width as u16)));
    obj.put(DataElement::new(tags::BITS_ALLOCATED, VR::US, us(16)));
    obj.put(DataElement::new(tags::BITS_STORED, VR::US, us(bits_stored)));
    obj.put(DataElement::new(tags::HIGH_BIT, VR::US, us(bits_stored - 1)));
    obj.put(DataElement::new(tags::PIXEL_REPRESENTATION, VR::US, us(0)));
    obj.put(DataElement::new(
        tags::PIXEL_DATA,
        VR::OW,
        PrimitiveValue::U16(pixels.iter().copied().collect()),
    ));
    let file = obj
        .with_meta(
            FileMetaTableBuilder::new()
                .transfer_syntax("1.2.840.10008.1.2.1")
                .media_storage_sop_class_uid("1.2.840.10008.5.1.4.1.1.1.1")
                .media_storage_sop_instance_uid("2.25.1"),
        )
        .map_err(|e| ingest_err(path, e.to_string()))?;
    file.write_to_file(path).map_err(|e| ingest_err(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Jsrt,
    Lidc,
    Phantom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Nodule,
    NonNodule,
}

impl Label {
    pub fn is_nodule(self) -> bool {
        self == Label::Nodule
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtlety {
    Obvious,
    RelativelyObvious,
    Subtle,
    VerySubtle,
    ExtremelySubtle,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($var:path => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($var => $s),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($var),)+
                    other => Err(format!("unknown {} `{}`", $what, other)),
                }
            }
        }
    };
}

text_enum!(Source, "source", { Source::Jsrt => "JSRT", Source::Lidc => "LIDC", Source::Phantom => "PHANTOM" });
text_enum!(Label, "label", { Label::Nodule => "nodule", Label::NonNodule => "non_nodule" });
text_enum!(Subtlety, "subtlety", {
    Subtlety::Obvious => "obvious",
    Subtlety::RelativelyObvious => "relatively_obvious",
    Subtlety::Subtle => "subtle",
    Subtlety::VerySubtle => "very_subtle",
    Subtlety::ExtremelySubtle => "extremely_subtle",
});

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub source: Source,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub subtlety: Option<Subtlety>,
    /// `(x, y)` in source-image pixels.
    pub nodule_center: Option<(u32, u32)>,
    pub nodule_size_mm: Option<f64>,
    pub patient_id: String,
}

impl ImageRecord {
    fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.label == Label::NonNodule && (self.nodule_center.is_some() || self.nodule_size_mm.is_some()) {
            return Err(format!("record `{}` is non_nodule but carries nodule geometry", self.id));
        }
        Ok(())
    }
}

/// Class counts `(nodule, non_nodule)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub nodule: usize,
    pub non_nodule: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    base_dir: PathBuf,
}

/// Column order of the manifest CSV.
pub const MANIFEST_COLUMNS: [&str; 9] = [
    "id",
    "source",
    "path",
    "label",
    "subtlety",
    "nodule_x",
    "nodule_y",
    "nodule_size_mm",
    "patient_id",
];

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    source: String,
    path: String,
    label: String,
    subtlety: String,
    nodule_x: String,
    nodule_y: String,
    nodule_size_mm: String,
    patient_id: String,
}

fn opt<T: FromStr>(s: &str, what: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad {what} `{s}`"))
    }
}

impl ManifestRow {
    fn into_record(self) -> Result<ImageRecord, String> {
        let center = match (opt::<u32>(&self.nodule_x, "nodule_x")?, opt::<u32>(&self.nodule_y, "nodule_y")?) {
            (Some(x), Some(y)) => Some((x, y)),
            (None, None) => None,
            _ => return Err("nodule_x and nodule_y must both be present or both absent".into()),
        };
        let size = opt::<f64>(&self.nodule_size_mm, "nodule_size_mm")?;
        if size.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
            return Err(format!("nodule_size_mm must be positive, got {}", self.nodule_size_mm));
        }
        let rec = ImageRecord {
            source: self.source.parse()?,
            label: self.label.parse()?,
            subtlety: opt::<Subtlety>(&self.subtlety, "subtlety")?,
            path: PathBuf::from(self.path),
            nodule_center: center,
            nodule_size_mm: size,
            patient_id: self.patient_id,
            id: self.id,
        };
        rec.check()?;
        Ok(rec)
    }

    fn from_record(r: &ImageRecord) -> Self {
        let s = |v: Option<String>| v.unwrap_or_default();
        Self {
            id: r.id.clone(),
            source: r.source.to_string(),
            path: r.path.to_string_lossy().into_owned(),
            label: r.label.to_string(),
            subtlety: s(r.subtlety.map(|v| v.to_string())),
            nodule_x: s(r.nodule_center.map(|c| c.0.to_string())),
            nodule_y: s(r.nodule_center.map(|c| c.1.to_string())),
            nodule_size_mm: s(r.nodule_size_mm.map(|v| v.to_string())),
            patient_id: r.patient_id.clone(),
        }
    }
}

impl DatasetManifest {
    /// Validates every record; errors name the offending (1-based) row.
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            r.check().map_err(|reason| CoreError::Schema { row: i + 1, reason })?;
            if !seen.insert(r.id.as_str()) {
                return Err(CoreError::Schema {
                    row: i + 1,
                    reason: format!("duplicate id `{}`", r.id),
                });
            }
        }
        Ok(Self {
            records,
            base_dir: PathBuf::new(),
        })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn class_counts(&self) -> ClassCounts {
        let nodule = self.records.iter().filter(|r| r.label.is_nodule()).count();
        ClassCounts {
            nodule,
            non_nodule: self.records.len() - nodule,
        }
    }

    pub fn resolve(&self, rec: &ImageRecord) -> PathBuf {
        if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            self.base_dir.join(&rec.path)
        }
    }

    /// Records whose id is not in `excluded`.
    pub fn without(&self, excluded: &HashSet<&str>) -> DatasetManifest {
        Self {
            records: self.records.iter().filter(|r| !excluded.contains(r.id.as_str())).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        for r in &self.records {
            w.serialize(ManifestRow::from_record(r))?;
        }
        if self.records.is_empty() {
            w.write_record(MANIFEST_COLUMNS)?;
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> CoreError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CoreError::io(path, io),
        other => CoreError::Evaluation(format!("csv error on {}: {other:?}", path.display())),
    }
}

/// Parses and validates a manifest CSV. Relative record paths resolve
/// against the CSV's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_COLUMNS {
        return Err(CoreError::Schema {
            row: 0,
            reason: format!("header must be {}", MANIFEST_COLUMNS.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| CoreError::Schema {
            row: i + 1,
            reason: e.to_string(),
        })?;
        records.push(row.into_record().map_err(|reason| CoreError::Schema { row: i + 1, reason })?);
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest::new(records)?.with_base_dir(base))
}

// ---------------------------------------------------------------------------
// Folds

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn members(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.assignment.iter().filter(move |(_, &f)| f == fold).map(|(id, _)| id.as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["id", "fold"])?;
        for (id, fold) in &self.assignment {
            w.write_record([id.as_str(), &fold.to_string()])?;
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }

    /// Reads an `id,fold` CSV; `k` is one more than the largest fold index.
    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut assignment = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || CoreError::Schema {
                row: i + 1,
                reason: "expected `id,fold`".into(),
            };
            let id = rec.get(0).ok_or_else(bad)?.to_string();
            let fold: usize = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if assignment.insert(id, fold).is_some() {
                return Err(CoreError::Schema {
                    row: i + 1,
                    reason: "duplicate id".into(),
                });
            }
        }
        let k = assignment.values().max().map_or(0, |m| m + 1);
        Ok(Self { k, seed, assignment })
    }
}

/// Seeded stratified k-fold split.
///
/// Each class is sorted by id, shuffled with a ChaCha8 stream seeded from
/// `seed`, and dealt round-robin; the deal for the second class continues from
/// the fold where the first one stopped so fold totals stay within one.
pub fn stratified_kfold(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(CoreError::arg(format!("k must be at least 2, got {k}")));
    }
    let mut rng = debias_nn::seeded_rng(seed);
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for label in [Label::Nodule, Label::NonNodule] {
        let mut ids: Vec<&str> = manifest
            .records()
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.id.as_str())
            .collect();
        if ids.len() < k {
            return Err(CoreError::arg(format!(
                "class {label} has {} members, fewer than k = {k}",
                ids.len()
            )));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids {
            assignment.insert(id.to_string(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(id: &str, label: Label) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            source: Source::Jsrt,
            path: format!("{id}.png").into(),
            label,
            subtlety: None,
            nodule_center: None,
            nodule_size_mm: None,
            patient_id: id.into(),
        }
    }

    fn manifest(nod: usize, non: usize) -> DatasetManifest {
        let mut recs: Vec<_> = (0..nod).map(|i| record(&format!("JPCLN{i:03}"), Label::Nodule)).collect();
        recs.extend((0..non).map(|i| record(&format!("JPCNN{i:03}"), Label::NonNodule)));
        DatasetManifest::new(recs).unwrap()
    }

    #[test]
    fn raw_decode_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.img");
        std::fs::write(&p, [0x0F, 0xFF, 0x00, 0x00]).unwrap();
        let plain = read_jsrt_raw(&p, 2, 1, RawOptions { invert: false }).unwrap();
        assert_eq!(plain.pixels(), &[4095, 0]);
        assert_eq!(plain.depth(), BitDepth::Twelve);
        let inv = read_jsrt_raw(&p, 2, 1, RawOptions::default()).unwrap();
        assert_eq!(inv.pixels(), &[0, 4095]);

        std::fs::write(&p, [0u8; 100]).unwrap();
        assert!(matches!(read_jsrt_raw(&p, 2048, 2048, RawOptions::default()), Err(CoreError::MalformedFile { .. })));
        std::fs::write(&p, [0x10, 0x00, 0x00, 0x00]).unwrap();
        assert!(matches!(
            read_jsrt_raw(&p, 2, 1, RawOptions::default()),
            Err(CoreError::CorruptSample { index: 0, value: 4096, .. })
        ));
    }

    #[test]
    fn raw_full_size_file() {
        let bytes = vec![0u8; 2048 * 2048 * 2];
        assert_eq!(bytes.len(), 8_388_608);
        let img = decode_jsrt_raw(&bytes, 2048, 2048, RawOptions::default()).unwrap();
        assert_eq!((img.width(), img.height(), img.depth()), (2048, 2048, BitDepth::Twelve));
    }

    #[test]
    fn dicom_gradient_rescale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.dcm");
        write_gray_dicom(&p, 2, 2, &[0, 1000, 2000, 3000], 12).unwrap();
        let img = convert_dicom(&p, 2).unwrap();
        assert_eq!(img.depth(), BitDepth::Eight);
        assert_eq!(img.pixels(), &[0, 85, 170, 255]);
    }

    #[test]
    fn dicom_constant_and_letterbox() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dcm");
        write_gray_dicom(&p, 4, 4, &[700; 16], 12).unwrap();
        let img = convert_dicom(&p, 8).unwrap();
        assert_eq!(img.dims(), (8, 8));
        assert!(img.pixels().iter().all(|&v| v == img.pixels()[0]));

        let wide = dir.path().join("w.dcm");
        write_gray_dicom(&wide, 4, 2, &[100, 200, 300, 400, 100, 200, 300, 400], 12).unwrap();
        let img = convert_dicom(&wide, 4).unwrap();
        assert_eq!(img.dims(), (4, 4));
        // letterbox rows above and below the content stay background
        assert!(img.pixels()[..4].iter().all(|&v| v == 0));
        assert_eq!(&img.pixels()[4..8], &[0, 85, 170, 255]);
    }

    #[test]
    fn dicom_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.dcm");
        std::fs::write(&p, b"not a dicom file").unwrap();
        assert!(matches!(convert_dicom(&p, 4), Err(CoreError::Ingest { .. })));
    }

    #[test]
    fn manifest_round_trip_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(3, 2);
        let mut recs = m.records().to_vec();
        recs[0].subtlety = Some(Subtlety::ExtremelySubtle);
        recs[0].nodule_center = Some((1520, 1364));
        recs[0].nodule_size_mm = Some(14.0);
        m = DatasetManifest::new(recs).unwrap();
        let p = dir.path().join("manifest.csv");
        m.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,source,path,label,subtlety,nodule_x,nodule_y,nodule_size_mm,patient_id\n"));
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.records(), m.records());
        assert_eq!(back.class_counts(), ClassCounts { nodule: 3, non_nodule: 2 });
        assert_eq!(back.resolve(&back.records()[0]), dir.path().join("JPCLN000.png"));
    }

    #[test]
    fn jsrt_scale_counts() {
        let m = manifest(154, 93);
        assert_eq!(m.class_counts(), ClassCounts { nodule: 154, non_nodule: 93 });
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        DatasetManifest::default().write_csv(&p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.class_counts(), ClassCounts { nodule: 0, non_nodule: 0 });
    }

    fn write_rows(rows: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut text = MANIFEST_COLUMNS.join(",") + "\n";
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn manifest_schema_errors_name_the_row() {
        let ok = "a,JSRT,a.png,nodule,subtle,10,20,12.5,p1";
        let cases = [
            ("b,JSRT,b.png,non_nodule,,,,30,p2", 2),
            ("a,JSRT,a2.png,nodule,,,,,p1", 2),
            ("b,JSRT,b.png,tumour,,,,,p2", 2),
            ("b,MARS,b.png,nodule,,,,,p2", 2),
            ("b,JSRT,b.png,nodule,,5,,,p2", 2),
            ("b,JSRT,b.png,nodule,kinda,,,,p2", 2),
        ];
        for (bad, row) in cases {
            let (_d, p) = write_rows(&[ok, bad]);
            match load_manifest(&p) {
                Err(CoreError::Schema { row: r, .. }) => assert_eq!(r, row, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn kfold_jsrt_counts() {
        let m = manifest(154, 93);
        let f = stratified_kfold(&m, 4, 42).unwrap();
        let mut nod = [0; 4];
        let mut non = [0; 4];
        for r in m.records() {
            let fold = f.fold_of(&r.id).unwrap();
            if r.label.is_nodule() {
                nod[fold] += 1
            } else {
                non[fold] += 1
            }
        }
        let mut nod_sorted = nod;
        nod_sorted.sort_unstable();
        let mut non_sorted = non;
        non_sorted.sort_unstable();
        assert_eq!(nod_sorted, [38, 38, 39, 39]);
        assert_eq!(non_sorted, [23, 23, 23, 24]);
        assert_eq!(f, stratified_kfold(&m, 4, 42).unwrap());
        assert_ne!(f, stratified_kfold(&m, 4, 43).unwrap());
    }

    #[test]
    fn kfold_argument_errors() {
        let m = manifest(10, 3);
        assert!(stratified_kfold(&m, 1, 0).is_err());
        assert!(stratified_kfold(&m, 4, 0).is_err());
    }

    #[test]
    fn fold_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = stratified_kfold(&manifest(9, 7), 3, 5).unwrap();
        let p = dir.path().join("folds.csv");
        f.write_csv(&p).unwrap();
        assert_eq!(FoldAssignment::read_csv(&p, 5).unwrap(), f);
    }

    proptest! {
        #[test]
        fn raw_round_trip(px in proptest::collection::vec(0u16..4096, 1..64), invert in any::<bool>()) {
            let img = GrayImage::new(px.len(), 1, BitDepth::Twelve, px).unwrap();
            let opts = RawOptions { invert };
            let bytes = encode_jsrt_raw(&img, opts).unwrap();
            prop_assert_eq!(decode_jsrt_raw(&bytes, img.width(), 1, opts).unwrap(), img);
        }

        #[test]
        fn kfold_is_a_stratified_partition(nod in 2usize..60, non in 2usize..60, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(nod >= k && non >= k);
            let m = manifest(nod, non);
            let f = stratified_kfold(&m, k, seed).unwrap();
            prop_assert_eq!(f.assignment.len(), m.len());
            for (label, total) in [(Label::Nodule, nod), (Label::NonNodule, non)] {
                let mut per = vec![0usize; k];
                for r in m.records().iter().filter(|r| r.label == label) {
                    per[f.fold_of(&r.id).unwrap()] += 1;
                }
                let lo = total / k;
                prop_assert!(per.iter().all(|&c| c == lo || c == lo + 1), "{:?}", per);
            }
        }

        #[test]
        fn loader_accepts_valid_and_rejects_violations(
            rows in proptest::collection::vec((any::<bool>(), any::<bool>(), 0u32..3000, 1u32..60), 0..20),
        ) {
            let mut lines = Vec::new();
            let mut expect_err = None;
            for (i, (nodule, geometry, xy, size)) in rows.iter().enumerate() {
                let label = if *nodule { "nodule" } else { "non_nodule" };
                let geo = if *geometry { format!("{xy},{xy},{size}") } else { ",,".into() };
                if !nodule && *geometry && expect_err.is_none() {
                    expect_err = Some(i + 1);
                }
                lines.push(format!("id{i},PHANTOM,id{i}.png,{label},,{geo},pat{i}"));
            }
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let (_d, p) = write_rows(&refs);
            match (load_manifest(&p), expect_err) {
                (Ok(m), None) => prop_assert_eq!(m.len(), rows.len()),
                (Err(CoreError::Schema { row, .. }), Some(r)) => prop_assert_eq!(row, r),
                (other, want) => prop_assert!(false, "{:?} vs expected error row {:?}", other.map(|m| m.len()), want),
            }
        }
    }
}
