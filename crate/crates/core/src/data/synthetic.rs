use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    /// Ellipse or rectangle with equal probability, per image.
    Either,
}

/// The texture painted inside the shape; this is what distinguishes the two
/// domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Intensity varies with the row only: `cos(2π r / p + φ)`.
    HStripes,
    /// Separable product `cos(2π r / p + φ) · cos(2π c / p + ψ)`.
    Dots,
}

impl TextureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TextureKind::HStripes => "h-stripes",
            TextureKind::Dots => "dots",
        }
    }
}

impl std::str::FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h-stripes" => Ok(TextureKind::HStripes),
            "dots" => Ok(TextureKind::Dots),
            _ => Err(Error::Config(format!("unknown texture kind `{s}` (expected h-stripes or dots)"))),
        }
    }
}

/// File name of the ground-truth sidecar inside a dataset directory.
pub const SIDECAR: &str = "truth.csv";

/// Inclusive `[lo, hi]` sampling range; `lo == hi` pins the parameter.
pub type Range = (f64, f64);

/// Parameters of one synthetic domain: a single textured shape on a flat
/// background.
///
/// Position, size and orientation form the shared feature; the texture is
/// the domain feature. Two specs that differ only in `texture` describe two
/// domains with identically distributed shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    /// 1 (grayscale) or 3 (identical RGB planes).
    pub channels: usize,
    pub shape_kind: ShapeKind,
    /// Shape center, in pixel-index coordinates.
    pub center_row: Range,
    pub center_col: Range,
    /// Semi-axis lengths (ellipse) or half side lengths (rectangle), pixels.
    pub half_extent: Range,
    /// Rotation of the shape, radians.
    pub orientation: Range,
    pub texture: TextureKind,
    /// Texture period in pixels.
    pub period: Range,
    /// Texture amplitude around `foreground`.
    pub contrast: Range,
    pub foreground: f64,
    pub background: f64,
}

impl SyntheticSpec {
    /// The default 32×32 grayscale domain with the given texture.
    pub fn desk(texture: TextureKind) -> Self {
        SyntheticSpec {
            height: 32,
            width: 32,
            channels: 1,
            shape_kind: ShapeKind::Either,
            center_row: (10.5, 20.5),
            center_col: (10.5, 20.5),
            half_extent: (4.5, 7.0),
            orientation: (0.0, PI),
            texture,
            period: (4.0, 6.0),
            contrast: (0.55, 0.7),
            foreground: 0.2,
            background: -0.9,
        }
    }

    /// The same geometry on a `size × size` canvas: centers, which are
    /// pixel-index coordinates, map through pixel centers; lengths scale.
    pub fn resized(&self, size: usize) -> Self {
        let k = size as f64 / self.height as f64;
        let center = |(lo, hi): Range| ((lo + 0.5) * k - 0.5, (hi + 0.5) * k - 0.5);
        SyntheticSpec {
            height: size,
            width: size,
            center_row: center(self.center_row),
            center_col: center(self.center_col),
            half_extent: (self.half_extent.0 * k, self.half_extent.1 * k),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): Range| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range [{lo}, {hi}] is not ordered")))
            }
        };
        ordered("center_row", self.center_row)?;
        ordered("center_col", self.center_col)?;
        ordered("half_extent", self.half_extent)?;
        ordered("orientation", self.orientation)?;
        ordered("period", self.period)?;
        ordered("contrast", self.contrast)?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("canvas must be non-empty".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.half_extent.0 <= 0.0 || self.period.0 < 2.0 || self.contrast.0 < 0.0 {
            return Err(Error::Config("half_extent > 0, period ≥ 2 and contrast ≥ 0 required".into()));
        }
        // Rotated rectangles reach furthest: the half diagonal.
        let reach = self.half_extent.1 * std::f64::consts::SQRT_2;
        let fits = |(lo, hi): Range, side: usize| lo - reach >= 0.0 && hi + reach <= side as f64 - 1.0;
        if !fits(self.center_row, self.height) || !fits(self.center_col, self.width) {
            return Err(Error::Config("shape does not fit inside the canvas for every sampled parameter".into()));
        }
        let lowest = self.foreground - self.contrast.1;
        let highest = self.foreground + self.contrast.1;
        if highest > 1.0 || lowest < -1.0 || self.background.abs() > 1.0 {
            return Err(Error::Config("pixel values must stay within [-1, 1]".into()));
        }
        if (lowest - self.background).abs() <= super::FOREGROUND_THRESHOLD
            || (highest - self.background).abs() <= super::FOREGROUND_THRESHOLD
            || (lowest - self.background).signum() != (highest - self.background).signum()
        {
            return Err(Error::Config(
                "every foreground pixel must differ from the background by more than the oracle threshold".into(),
            ));
        }
        Ok(())
    }
}

/// Generation record of one image: the ground truth the oracles are
/// checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub orientation: f64,
    pub texture_kind: TextureKind,
    /// Cycles per pixel (`1 / period`).
    pub texture_freq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    pub seed: u64,
    /// `[C, H, W]` images in `[-1, 1]`.
    pub images: Vec<Tensor<f32>>,
    /// One record per image, or empty when loaded without a sidecar.
    pub records: Vec<GroundTruth>,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        seed: u64,
        images: Vec<Tensor<f32>>,
        records: Vec<GroundTruth>,
    ) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::Config("dataset must contain at least one image".into()));
        };
        if first.shape().len() != 3 {
            return Err(Error::shape("dataset image", first.shape(), &[0, 0, 0]));
        }
        if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::shape("dataset image", bad.shape(), first.shape()));
        }
        if !records.is_empty() && records.len() != images.len() {
            return Err(Error::Config(format!("{} records for {} images", records.len(), images.len())));
        }
        Ok(ImageDataset { name: name.into(), seed, images, records })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    /// Writes `img_NNNNN.pgm` (or `.ppm`) files plus, when records exist,
    /// the `truth.csv` sidecar into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ext = if self.image_shape()[0] == 1 { "pgm" } else { "ppm" };
        let mut written = Vec::with_capacity(self.len() + 1);
        for (i, img) in self.images.iter().enumerate() {
            let path = dir.join(format!("img_{i:05}.{ext}"));
            super::netpbm::save(img, &path)?;
            written.push(path);
        }
        if !self.records.is_empty() {
            let path = dir.join(SIDECAR);
            self.write_sidecar(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Loads every `.pgm`/`.ppm` file of `dir` in file-name order, with the
    /// `truth.csv` sidecar when present.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if matches!(path.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")) {
                paths.push(path);
            }
        }
        paths.sort();
        let images = paths.iter().map(|p| super::netpbm::load(p)).collect::<Result<Vec<_>>>()?;
        let sidecar = dir.join(SIDECAR);
        let records = if sidecar.exists() { Self::read_sidecar(&sidecar)? } else { Vec::new() };
        let name = dir.file_name().map_or_else(|| "dataset".to_string(), |n| n.to_string_lossy().into_owned());
        Self::new(name, 0, images, records).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", dir.display())),
            other => other,
        })
    }

    /// Writes the ground-truth sidecar CSV.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,centroid_row,centroid_col,orientation,texture_kind,texture_freq\n");
        for (i, r) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                r.centroid_row,
                r.centroid_col,
                r.orientation,
                r.texture_kind.as_str(),
                r.texture_freq
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses a sidecar written by [`ImageDataset::write_sidecar`].
    pub fn read_sidecar(path: &Path) -> Result<Vec<GroundTruth>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("index,centroid_row,centroid_col,orientation,texture_kind,texture_freq") {
            return Err(Error::Format(format!("{}: unexpected sidecar header", path.display())));
        }
        let bad = |n: usize| Error::Format(format!("{}: malformed sidecar row {n}", path.display()));
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 || f[0].parse::<usize>().ok() != Some(n) {
                return Err(bad(n));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
            records.push(GroundTruth {
                centroid_row: num(f[1])?,
                centroid_col: num(f[2])?,
                orientation: num(f[3])?,
                texture_kind: f[4].parse().map_err(|_| bad(n))?,
                texture_freq: num(f[5])?,
            });
        }
        Ok(records)
    }
}

/// Shape-source and texture-target datasets of a translation task.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub shape_source: ImageDataset,
    pub texture_target: ImageDataset,
}

impl DatasetPair {
    pub fn new(shape_source: ImageDataset, texture_target: ImageDataset) -> Result<Self> {
        if shape_source.image_shape() != texture_target.image_shape() {
            return Err(Error::shape("dataset pair", shape_source.image_shape(), texture_target.image_shape()));
        }
        Ok(DatasetPair { shape_source, texture_target })
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): Range) -> f64 {
    // Always consume one draw so pinning a range does not shift later draws.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Renders image `index` of a domain; depends only on `(spec, seed, index)`.
pub fn render(spec: &SyntheticSpec, seed: u64, index: u64) -> (Tensor<f32>, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seeds::derive(seed, index));
    let rect = match spec.shape_kind {
        ShapeKind::Ellipse => {
            let _: f64 = rng.random();
            false
        }
        ShapeKind::Rectangle => {
            let _: f64 = rng.random();
            true
        }
        ShapeKind::Either => rng.random::<f64>() < 0.5,
    };
    let cr = draw(&mut rng, spec.center_row);
    let cc = draw(&mut rng, spec.center_col);
    let a = draw(&mut rng, spec.half_extent);
    let b = draw(&mut rng, spec.half_extent);
    let theta = draw(&mut rng, spec.orientation);
    let period = draw(&mut rng, spec.period);
    let contrast = draw(&mut rng, spec.contrast);
    let phase_r = draw(&mut rng, (0.0, 2.0 * PI));
    let phase_c = draw(&mut rng, (0.0, 2.0 * PI));

    let (h, w) = (spec.height, spec.width);
    let (sin, cos) = theta.sin_cos();
    let omega = 2.0 * PI / period;
    let mut plane = vec![spec.background as f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            // Coordinates in the shape's own frame.
            let u = dc * cos + dr * sin;
            let v = -dc * sin + dr * cos;
            let inside = if rect { u.abs() <= a && v.abs() <= b } else { (u / a).powi(2) + (v / b).powi(2) <= 1.0 };
            if !inside {
                continue;
            }
            let t = match spec.texture {
                TextureKind::HStripes => (omega * r as f64 + phase_r).cos(),
                TextureKind::Dots => (omega * r as f64 + phase_r).cos() * (omega * c as f64 + phase_c).cos(),
            };
            plane[r * w + c] = (spec.foreground + contrast * t) as f32;
        }
    }
    let mut data = Vec::with_capacity(spec.channels * h * w);
    for _ in 0..spec.channels {
        data.extend_from_slice(&plane);
    }
    let img = Tensor::new(&[spec.channels, h, w], data).expect("canvas shape");
    let truth = GroundTruth {
        centroid_row: cr,
        centroid_col: cc,
        orientation: theta,
        texture_kind: spec.texture,
        texture_freq: 1.0 / period,
    };
    (img, truth)
}

/// `n` images of one domain. Image `i` uses the derived seed
/// `derive(seed, i)`, so generation order is irrelevant.
pub fn gen_domain(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<ImageDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let (images, records) = (0..n as u64).map(|i| render(spec, seed, i)).unzip();
    ImageDataset::new(spec.texture.as_str(), seed, images, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_spec_is_fully_determined() {
        let mut spec = SyntheticSpec::desk(TextureKind::HStripes);
        spec.shape_kind = ShapeKind::Rectangle;
        spec.center_row = (16.0, 16.0);
        spec.center_col = (15.0, 15.0);
        spec.half_extent = (4.0, 4.0);
        spec.orientation = (0.0, 0.0);
        spec.period = (4.0, 4.0);
        spec.contrast = (0.0, 0.0);
        let a = gen_domain(&spec, 1, 1).unwrap();
        let b = gen_domain(&spec, 1, 99).unwrap();
        // Without contrast the random phases no longer matter.
        assert_eq!(a.images, b.images);
        let img = &a.images[0];
        let fg = img.data().iter().filter(|&&v| v == 0.2).count();
        assert_eq!(fg, 9 * 9);
        assert_eq!(img.data()[16 * 32 + 15], 0.2);
        assert_eq!(img.data()[0], -0.9);
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let spec = SyntheticSpec::desk(TextureKind::Dots);
        let a = gen_domain(&spec, 8, 5).unwrap();
        let b = gen_domain(&spec, 8, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(render(&spec, 5, 6).0, a.images[6]);
        assert_ne!(a.images[0], gen_domain(&spec, 1, 6).unwrap().images[0]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::desk(TextureKind::Dots);
        spec.half_extent = (5.0, 14.0);
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::desk(TextureKind::Dots);
        spec.foreground = -0.7;
        assert!(spec.validate().is_err());
        assert!(gen_domain(&SyntheticSpec::desk(TextureKind::Dots), 0, 1).is_err());
    }

    #[test]
    fn three_channel_images_repeat_the_plane() {
        let mut spec = SyntheticSpec::desk(TextureKind::HStripes);
        spec.channels = 3;
        let (img, _) = render(&spec, 2, 0);
        let d = img.data();
        assert_eq!(&d[..1024], &d[1024..2048]);
        assert_eq!(&d[..1024], &d[2048..]);
    }
}
