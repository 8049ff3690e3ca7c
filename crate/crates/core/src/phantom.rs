//! Synthetic chest-radiograph phantoms with known lung fields, rib bands,
//! nodules and corner markers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, ImageRecord, Label, Source};
use crate::error::{CoreError, Result};
use crate::image::{BitDepth, GrayImage, LungMask};

/// Axis-aligned ellipse in pixel coordinates (x to the right, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl Ellipse {
    /// Normalised radial distance; `<= 1` is inside.
    pub fn norm(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.norm(x, y) <= 1.0
    }

    /// Pixel membership, tested at the pixel centre.
    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.contains(col as f64 + 0.5, row as f64 + 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoduleSpec {
    /// `(x, y)` in pixels.
    pub center: (f64, f64),
    /// Rendered as a Gaussian with sigma = radius / 2.
    pub radius: f64,
    pub peak: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub corner: Corner,
    pub side: usize,
    /// Gap between the image edge and the square.
    pub margin: usize,
    pub intensity: f64,
}

impl MarkerSpec {
    /// Half-open `(row0, col0, row1, col1)` of the square in a `size` image.
    pub fn rect(&self, size: usize) -> (usize, usize, usize, usize) {
        let lo = self.margin;
        let hi = size.saturating_sub(self.margin + self.side);
        let (r0, c0) = match self.corner {
            Corner::TopLeft => (lo, lo),
            Corner::TopRight => (lo, hi),
            Corner::BottomLeft => (hi, lo),
            Corner::BottomRight => (hi, hi),
        };
        (r0, c0, (r0 + self.side).min(size), (c0 + self.side).min(size))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub thorax: Ellipse,
    pub lungs: [Ellipse; 2],
    pub background: f64,
    pub tissue: f64,
    pub lung: f64,
    pub rib_period: f64,
    pub rib_amplitude: f64,
    pub rib_phase: f64,
    pub nodule: Option<NoduleSpec>,
    pub marker: Option<MarkerSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// A 64-pixel-scaled default layout without nodule or marker.
    pub fn standard(size: usize, seed: u64) -> Self {
        let s = size as f64 / 64.0;
        Self {
            size,
            thorax: Ellipse { cx: 32.0 * s, cy: 33.0 * s, ax: 29.0 * s, ay: 29.0 * s },
            lungs: [
                Ellipse { cx: 21.0 * s, cy: 33.0 * s, ax: 8.5 * s, ay: 18.0 * s },
                Ellipse { cx: 43.0 * s, cy: 33.0 * s, ax: 8.5 * s, ay: 18.0 * s },
            ],
            background: 20.0,
            tissue: 150.0,
            lung: 60.0,
            rib_period: 12.0 * s,
            rib_amplitude: 40.0,
            rib_phase: 0.0,
            nodule: None,
            marker: None,
            noise_sigma: 6.0,
            seed,
        }
    }

    /// Rib intensity added at row-coordinate `y`, in `[0, amplitude]`.
    pub fn rib_term(&self, y: f64) -> f64 {
        self.rib_amplitude * 0.5 * (1.0 + (2.0 * PI * y / self.rib_period + self.rib_phase).sin())
    }

    /// Whether pixel row `row` lies on a rib band (rib term above half amplitude).
    pub fn is_band_row(&self, row: usize) -> bool {
        self.rib_term(row as f64 + 0.5) > self.rib_amplitude / 2.0
    }

    pub fn in_lung(&self, row: usize, col: usize) -> bool {
        self.lungs.iter().any(|l| l.covers(row, col))
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(CoreError::Spec("size must be positive".into()));
        }
        if !(self.rib_period > 0.0) || self.noise_sigma < 0.0 || self.rib_amplitude < 0.0 {
            return Err(CoreError::Spec("rib period must be positive; amplitude and noise non-negative".into()));
        }
        if let Some(n) = &self.nodule {
            if !self.lungs.iter().any(|l| l.contains(n.center.0, n.center.1)) {
                return Err(CoreError::Spec(format!(
                    "nodule centre ({:.1}, {:.1}) lies outside both lungs",
                    n.center.0, n.center.1
                )));
            }
            if !(n.radius > 0.0) {
                return Err(CoreError::Spec("nodule radius must be positive".into()));
            }
        }
        if let Some(m) = &self.marker {
            if m.side == 0 || m.margin + m.side > self.size {
                return Err(CoreError::Spec("marker does not fit in the image".into()));
            }
            let (r0, c0, r1, c1) = m.rect(self.size);
            if (r0..r1).any(|r| (c0..c1).any(|c| self.in_lung(r, c))) {
                return Err(CoreError::Spec("marker overlaps a lung field".into()));
            }
        }
        Ok(())
    }
}

/// One rendered phantom. `bone_free` is the same render without rib bands
/// (identical noise), the supervision target for rib suppression.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: LungMask,
    pub record: ImageRecord,
    pub bone_free: GrayImage,
}

/// Ground-truth lung mask: the union of the rasterised lung ellipses.
pub fn lung_mask(spec: &PhantomSpec) -> LungMask {
    LungMask::from_fn(spec.size, spec.size, |r, c| spec.in_lung(r, c))
}

/// Renders the phantom. Deterministic for a fixed spec (the seed drives the noise).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = debias_nn::seeded_rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| CoreError::Spec(e.to_string()))?;
    let marker = spec.marker.map(|m| (m, m.rect(n)));
    let mut with = Vec::with_capacity(n * n);
    let mut without = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = r as f64 + 0.5;
        let rib = spec.rib_term(y);
        for c in 0..n {
            let x = c as f64 + 0.5;
            let mut base = spec.background;
            let mut ribs = 0.0;
            let mut eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            if spec.thorax.contains(x, y) {
                base = if spec.in_lung(r, c) { spec.lung } else { spec.tissue };
                ribs = rib;
            }
            if let Some(nod) = &spec.nodule {
                let sigma = nod.radius / 2.0;
                let d2 = (x - nod.center.0).powi(2) + (y - nod.center.1).powi(2);
                base += nod.peak * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            if let Some((m, (r0, c0, r1, c1))) = &marker {
                if (*r0..*r1).contains(&r) && (*c0..*c1).contains(&c) {
                    // burned-in label: flat, noise-free
                    base = m.intensity;
                    ribs = 0.0;
                    eps = 0.0;
                }
            }
            let q = |v: f64| (v + eps).round().clamp(0.0, 255.0) as u16;
            with.push(q(base + ribs));
            without.push(q(base));
        }
    }
    let label = if spec.nodule.is_some() { Label::Nodule } else { Label::NonNodule };
    let record = ImageRecord {
        id: format!("phantom_{}", spec.seed),
        source: Source::Phantom,
        path: PathBuf::new(),
        label,
        subtlety: None,
        nodule_center: spec.nodule.map(|nd| (nd.center.0.round() as u32, nd.center.1.round() as u32)),
        nodule_size_mm: spec.nodule.map(|nd| 2.0 * nd.radius),
        patient_id: format!("phantom_{}", spec.seed),
    };
    Ok(Phantom {
        image: GrayImage::new(n, n, BitDepth::Eight, with)?,
        mask: lung_mask(spec),
        record,
        bone_free: GrayImage::new(n, n, BitDepth::Eight, without)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfounderPolicy {
    /// Markers on every nodule image, none on non-nodule images.
    Correlated,
    /// Markers on every non-nodule image, none on nodule images.
    Anticorrelated,
    Absent,
}

impl ConfounderPolicy {
    pub fn has_marker(self, label: Label) -> bool {
        match self {
            ConfounderPolicy::Correlated => label == Label::Nodule,
            ConfounderPolicy::Anticorrelated => label == Label::NonNodule,
            ConfounderPolicy::Absent => false,
        }
    }
}

impl std::str::FromStr for ConfounderPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "correlated" => Ok(Self::Correlated),
            "anticorrelated" => Ok(Self::Anticorrelated),
            "absent" => Ok(Self::Absent),
            o => Err(format!("unknown confounder policy `{o}`")),
        }
    }
}

/// Randomisation ranges for corpus generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub size: usize,
    pub noise_sigma: f64,
    pub rib_amplitude: f64,
    pub nodule_radius: (f64, f64),
    pub nodule_peak: (f64, f64),
    /// Maximum lung-centre displacement, as a fraction of the image size.
    pub jitter: f64,
    pub marker: MarkerSpec,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            size: 64,
            noise_sigma: 6.0,
            rib_amplitude: 40.0,
            nodule_radius: (3.5, 5.0),
            nodule_peak: (60.0, 90.0),
            jitter: 0.03,
            marker: MarkerSpec { corner: Corner::TopLeft, side: 6, margin: 1, intensity: 255.0 },
        }
    }
}

/// Draws the spec for corpus image `index`.
pub fn corpus_spec<R: Rng>(opts: &CorpusOptions, nodule: bool, marker: bool, rng: &mut R) -> PhantomSpec {
    let mut spec = PhantomSpec::standard(opts.size, rng.random());
    let s = opts.size as f64;
    let j = opts.jitter * s;
    let (dx, dy) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
    let scale = rng.random_range(0.94..=1.06);
    for lung in spec.lungs.iter_mut() {
        lung.cx += dx;
        lung.cy += dy;
        lung.ax *= scale;
        lung.ay *= scale;
    }
    spec.rib_amplitude = opts.rib_amplitude;
    spec.rib_phase = rng.random_range(0.0..2.0 * PI);
    spec.noise_sigma = opts.noise_sigma;
    if nodule {
        let lung = spec.lungs[rng.random_range(0..2)];
        let radius = rng.random_range(opts.nodule_radius.0..=opts.nodule_radius.1);
        let peak = rng.random_range(opts.nodule_peak.0..=opts.nodule_peak.1);
        // uniform over the inner part of the ellipse so the blob stays in the lung
        let (t, rho) = (rng.random_range(0.0..2.0 * PI), rng.random::<f64>().sqrt());
        let reach = (1.0 - radius / lung.ax.min(lung.ay)).max(0.0) * 0.9;
        spec.nodule = Some(NoduleSpec {
            center: (
                lung.cx + reach * rho * lung.ax * t.cos(),
                lung.cy + reach * rho * lung.ay * t.sin(),
            ),
            radius,
            peak,
        });
    }
    if marker {
        spec.marker = Some(opts.marker);
    }
    spec
}

/// Renders `n_per_class` nodule and `n_per_class` non-nodule phantoms in memory.
/// Ids are `phantom_{seed}_{index:04}`, nodule images first.
pub fn synthesize_corpus(
    n_per_class: usize,
    policy: ConfounderPolicy,
    seed: u64,
    opts: &CorpusOptions,
) -> Result<Vec<Phantom>> {
    if n_per_class == 0 {
        return Err(CoreError::arg("n_per_class must be at least 1"));
    }
    let mut rng = debias_nn::seeded_rng(seed);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = if i < n_per_class { Label::Nodule } else { Label::NonNodule };
        let spec = corpus_spec(opts, label == Label::Nodule, policy.has_marker(label), &mut rng);
        let mut p = generate_phantom(&spec)?;
        let id = format!("phantom_{seed}_{i:04}");
        p.record.path = PathBuf::from("images").join(format!("{id}.png"));
        p.record.patient_id = id.clone();
        p.record.id = id;
        out.push(p);
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Mask written alongside corpus image `id`.
pub fn mask_path(corpus_dir: &Path, id: &str) -> PathBuf {
    corpus_dir.join("masks").join(format!("{id}.png"))
}

/// Rib-free companion of corpus image `id`.
pub fn bone_free_path(corpus_dir: &Path, id: &str) -> PathBuf {
    corpus_dir.join("bone_free").join(format!("{id}.png"))
}

/// Writes images, masks, rib-free renders and `manifest.csv` under `out_dir`.
pub fn generate_corpus(
    n_per_class: usize,
    policy: ConfounderPolicy,
    seed: u64,
    out_dir: &Path,
    opts: &CorpusOptions,
) -> Result<DatasetManifest> {
    let phantoms = synthesize_corpus(n_per_class, policy, seed, opts)?;
    write_corpus(&phantoms, out_dir)
}

pub fn write_corpus(phantoms: &[Phantom], out_dir: &Path) -> Result<DatasetManifest> {
    for sub in ["images", "masks", "bone_free"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| CoreError::io(&d, e))?;
    }
    for p in phantoms {
        p.image.save_png(&out_dir.join(&p.record.path))?;
        p.mask.save_png(&mask_path(out_dir, &p.record.id))?;
        p.bone_free.save_png(&bone_free_path(out_dir, &p.record.id))?;
    }
    let manifest = DatasetManifest::new(phantoms.iter().map(|p| p.record.clone()).collect())?;
    manifest.write_csv(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest.with_base_dir(out_dir))
}

/// Mean intensity on rib-band rows minus mean on inter-band rows, over lung
/// pixels away from any nodule.
pub fn rib_contrast(img: &GrayImage, spec: &PhantomSpec) -> f64 {
    let (mut band, mut gap) = ((0.0, 0usize), (0.0, 0usize));
    for r in 0..spec.size {
        let on_band = spec.is_band_row(r);
        for c in 0..spec.size {
            if !spec.in_lung(r, c) || near_nodule(spec, r, c) {
                continue;
            }
            let v = img.get(r, c) as f64;
            let acc = if on_band { &mut band } else { &mut gap };
            acc.0 += v;
            acc.1 += 1;
        }
    }
    band.0 / band.1.max(1) as f64 - gap.0 / gap.1.max(1) as f64
}

fn near_nodule(spec: &PhantomSpec, r: usize, c: usize) -> bool {
    spec.nodule.is_some_and(|n| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        (x - n.center.0).hypot(y - n.center.1) <= 2.0 * n.radius
    })
}

/// Mean of `with - without` over the nodule disc (radius = 2 sigma), where
/// both images share geometry, ribs and noise and differ only by the nodule.
pub fn nodule_contrast(with: &GrayImage, without: &GrayImage, nodule: &NoduleSpec) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..with.height() {
        for c in 0..with.width() {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            if (x - nodule.center.0).hypot(y - nodule.center.1) <= nodule.radius {
                sum += with.get(r, c) as f64 - without.get(r, c) as f64;
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgops;
    use proptest::prelude::*;

    fn with_nodule(seed: u64) -> PhantomSpec {
        let mut s = PhantomSpec::standard(64, seed);
        s.nodule = Some(NoduleSpec { center: (21.0, 30.0), radius: 4.0, peak: 70.0 });
        s
    }

    #[test]
    fn label_follows_nodule() {
        assert_eq!(generate_phantom(&with_nodule(1)).unwrap().record.label, Label::Nodule);
        let plain = generate_phantom(&PhantomSpec::standard(64, 1)).unwrap();
        assert_eq!(plain.record.label, Label::NonNodule);
        assert_eq!(plain.record.source, Source::Phantom);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_phantom(&with_nodule(9)).unwrap();
        assert_eq!(a, generate_phantom(&with_nodule(9)).unwrap());
        assert_ne!(a.image, generate_phantom(&with_nodule(10)).unwrap().image);
    }

    #[test]
    fn nodule_outside_lung_is_a_spec_error() {
        let mut s = PhantomSpec::standard(64, 0);
        s.nodule = Some(NoduleSpec { center: (32.0, 5.0), radius: 3.0, peak: 50.0 });
        assert!(matches!(generate_phantom(&s), Err(CoreError::Spec(_))));
    }

    #[test]
    fn marker_overlapping_lung_is_a_spec_error() {
        let mut s = PhantomSpec::standard(64, 0);
        s.marker = Some(MarkerSpec { corner: Corner::TopLeft, side: 30, margin: 0, intensity: 255.0 });
        assert!(matches!(generate_phantom(&s), Err(CoreError::Spec(_))));
    }

    #[test]
    fn marker_vanishes_under_lung_mask() {
        let mut s = PhantomSpec::standard(64, 3);
        s.marker = Some(CorpusOptions::default().marker);
        let p = generate_phantom(&s).unwrap();
        assert_eq!(p.image.get(2, 2), 255);
        let masked = imgops::apply_mask(&p.image, &p.mask).unwrap();
        let (r0, c0, r1, c1) = s.marker.unwrap().rect(64);
        for r in r0..r1 {
            for c in c0..c1 {
                assert_eq!(masked.get(r, c), 0);
            }
        }
    }

    #[test]
    fn mask_is_rasterised_ellipses() {
        let s = PhantomSpec::standard(64, 0);
        let m = generate_phantom(&s).unwrap().mask;
        for r in 0..64 {
            for c in 0..64 {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let inside = s.lungs.iter().any(|l| ((x - l.cx) / l.ax).powi(2) + ((y - l.cy) / l.ay).powi(2) <= 1.0);
                assert_eq!(m.get(r, c), inside);
            }
        }
    }

    #[test]
    fn rib_bands_have_contrast() {
        let mut s = PhantomSpec::standard(64, 0);
        s.noise_sigma = 0.0;
        let p = generate_phantom(&s).unwrap();
        // noise-free local background is the bone-free render
        let (mut sum, mut n) = (0.0, 0);
        for r in (0..64).filter(|&r| s.is_band_row(r)) {
            for c in (0..64).filter(|&c| s.thorax.covers(r, c)) {
                sum += (p.image.get(r, c) as f64 - p.bone_free.get(r, c) as f64).abs();
                n += 1;
            }
        }
        assert!(sum / n as f64 >= s.rib_amplitude / 2.0);
        assert!(rib_contrast(&p.image, &s) > 0.5 * s.rib_amplitude);
        assert!(rib_contrast(&p.bone_free, &s).abs() < 1.0);
    }

    #[test]
    fn nodule_contrast_measures_the_bump() {
        let s = with_nodule(4);
        let mut bare = s.clone();
        bare.nodule = None;
        let a = generate_phantom(&s).unwrap();
        let b = generate_phantom(&bare).unwrap();
        let c = nodule_contrast(&a.image, &b.image, &s.nodule.unwrap());
        // mean of peak * exp(-d^2 / 2 sigma^2) over the disc d <= 2 sigma
        let expect = 70.0 * 2.0 * (1.0 - (-2.0f64).exp()) / 4.0;
        assert!((c - expect).abs() < 3.0, "{c} vs {expect}");
    }

    #[test]
    fn corpus_policies() {
        let opts = CorpusOptions::default();
        let absent = synthesize_corpus(5, ConfounderPolicy::Absent, 1, &opts).unwrap();
        assert_eq!(absent.len(), 10);
        let m = DatasetManifest::new(absent.iter().map(|p| p.record.clone()).collect()).unwrap();
        assert_eq!(m.class_counts(), crate::corpus::ClassCounts { nodule: 5, non_nodule: 5 });
        let has_marker = |p: &Phantom| p.image.get(3, 3) == 255;
        assert!(absent.iter().all(|p| !has_marker(p)));
        for (policy, nodule_marked) in [(ConfounderPolicy::Correlated, true), (ConfounderPolicy::Anticorrelated, false)] {
            for p in synthesize_corpus(6, policy, 2, &opts).unwrap() {
                assert_eq!(has_marker(&p), p.record.label.is_nodule() == nodule_marked);
            }
        }
        assert!(synthesize_corpus(0, ConfounderPolicy::Absent, 1, &opts).is_err());
    }

    #[test]
    fn corpus_on_disk_is_reproducible() {
        let opts = CorpusOptions { size: 32, ..Default::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_corpus(3, ConfounderPolicy::Correlated, 11, a.path(), &opts).unwrap();
        let mb = generate_corpus(3, ConfounderPolicy::Correlated, 11, b.path(), &opts).unwrap();
        assert_eq!(ma.records(), mb.records());
        for rec in ma.records() {
            let fa = std::fs::read(a.path().join(&rec.path)).unwrap();
            assert_eq!(fa, std::fs::read(b.path().join(&rec.path)).unwrap());
            let img = GrayImage::load_png(&ma.resolve(rec)).unwrap();
            assert_eq!(img.dims(), (32, 32));
            assert_eq!(LungMask::load_png(&mask_path(a.path(), &rec.id)).unwrap().dims(), (32, 32));
        }
        assert_eq!(
            std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
        let back = crate::corpus::load_manifest(&a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.records(), ma.records());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn corpus_specs_satisfy_invariants(seed in any::<u64>(), nodule in any::<bool>(), marker in any::<bool>()) {
            let opts = CorpusOptions::default();
            let spec = corpus_spec(&opts, nodule, marker, &mut debias_nn::seeded_rng(seed));
            let p = generate_phantom(&spec).unwrap();
            if let Some(n) = spec.nodule {
                prop_assert!(spec.lungs.iter().any(|l| l.contains(n.center.0, n.center.1)));
                prop_assert!(p.mask.get(n.center.1 as usize, n.center.0 as usize));
            }
            if let Some(m) = spec.marker {
                let (r0, c0, r1, c1) = m.rect(spec.size);
                for r in r0..r1 {
                    for c in c0..c1 {
                        prop_assert!(!p.mask.get(r, c));
                    }
                }
            }
            prop_assert_eq!(p.mask.clone(), lung_mask(&spec));
        }
    }
}
