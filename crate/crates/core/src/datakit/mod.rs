//! Dataset ingestion, resampling, augmentation and splits.
//!
//! A dataset directory holds one subdirectory per class:
//!
//! ```text
//! root/
//!   mask/     *.png | *.ppm
//!   no_mask/  *.png | *.ppm
//! ```
//!
//! Training and inference both normalize pixels with [`normalize_pixel`]
//! (`v / 255`).

mod augment;
mod resize;
mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment_dataset, augment_interpolation, augment_standard, StandardAugment};
pub use resize::{resize, Interpolation};
pub use synth::synth_dataset;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Side length every pipeline output is resampled to.
pub const IMAGE_SIZE: usize = 32;

pub const CLASS_DIRS: [(&str, Label); 2] = [("mask", Label::Mask), ("no_mask", Label::NoMask)];

/// 8-bit HWC image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || !matches!(channels, 1 | 3) {
            return Err(Error::Data(format!(
                "invalid image geometry {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Data(format!(
                "image {height}x{width}x{channels} needs {} bytes, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Decodes a PNG or binary PPM/PGM file.
    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(buf) => Image::new(h, w, 1, buf.into_raw()),
            other => Image::new(h, w, 3, other.into_rgb8().into_raw()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Converts between gray and RGB (luma weights 0.299/0.587/0.114).
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, 3) => Ok(Image {
                channels: 3,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
                ..*self
            }),
            (3, 1) => Ok(Image {
                channels: 1,
                data: self
                    .data
                    .chunks(3)
                    .map(|p| resize::to_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
                    .collect(),
                ..*self
            }),
            (_, c) => Err(Error::Data(format!("unsupported channel count {c}"))),
        }
    }
}

/// Binary class; Mask is the positive class throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    NoMask = 0,
    Mask = 1,
}

impl Label {
    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::NoMask),
            1 => Ok(Label::Mask),
            other => Err(Error::Data(format!("label {other} is not binary"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Mask => "mask",
            Label::NoMask => "no_mask",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Label::Mask => "Mask",
            Label::NoMask => "No-Mask",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Image),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub source: ImageSource,
    pub label: Label,
    /// Provenance (capture source, augmentation method...).
    pub tag: String,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<Image> {
        match &self.source {
            ImageSource::File(p) => Image::open(p),
            ImageSource::Memory(img) => Ok(img.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Files under the root that could not be decoded.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(mask, no_mask)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let mask = self.entries.iter().filter(|e| e.label == Label::Mask).count();
        (mask, self.entries.len() - mask)
    }

    /// `path,label,tag` index; in-memory entries are listed as `<memory:i>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,label,tag\n");
        for (i, e) in self.entries.iter().enumerate() {
            let path = match &e.source {
                ImageSource::File(p) => p.display().to_string(),
                ImageSource::Memory(_) => format!("<memory:{i}>"),
            };
            writeln!(out, "{path},{},{}", e.label.dir_name(), e.tag).unwrap();
        }
        out
    }

    /// Seeded sample of `n` entries (all of them when `n >= len`), in
    /// manifest order.
    pub fn sample(&self, n: usize, seed: u64) -> DatasetManifest {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        DatasetManifest {
            entries: idx.into_iter().map(|i| self.entries[i].clone()).collect(),
            skipped: Vec::new(),
        }
    }
}

/// Lists `root/mask` and `root/no_mask` in lexicographic order. Every file
/// is decoded once; failures go to [`DatasetManifest::skipped`].
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut manifest = DatasetManifest::default();
    for (dir, label) in CLASS_DIRS {
        let class_dir = root.join(dir);
        if !class_dir.is_dir() {
            return Err(Error::Data(format!("missing class directory {}", class_dir.display())));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&class_dir)
            .map_err(|e| Error::io(&class_dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let before = manifest.entries.len();
        for path in files {
            match Image::open(&path) {
                Ok(_) => manifest.entries.push(ManifestEntry {
                    source: ImageSource::File(path),
                    label,
                    tag: dir.to_string(),
                }),
                Err(e) => manifest.skipped.push((path, e.to_string())),
            }
        }
        if manifest.entries.len() == before {
            return Err(Error::Data(format!(
                "class directory {} has no decodable images",
                class_dir.display()
            )));
        }
    }
    Ok(manifest)
}

/// Writes a manifest as `out/{mask,no_mask}/NNNNNN_tag.png` and returns the
/// written manifest.
pub fn write_dataset(manifest: &DatasetManifest, out: &Path) -> Result<DatasetManifest> {
    let mut written = DatasetManifest::default();
    for (_, label) in CLASS_DIRS {
        let dir = out.join(label.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, e) in manifest.entries.iter().enumerate() {
        let tag: String = e
            .tag
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = out.join(e.label.dir_name()).join(format!("{i:06}_{tag}.png"));
        e.load()?.save_png(&path)?;
        written.entries.push(ManifestEntry {
            source: ImageSource::File(path),
            label: e.label,
            tag: e.tag.clone(),
        });
    }
    Ok(written)
}

/// Stratified, seeded train/validation split.
///
/// The validation size is `round(len * val_fraction)`, shared between the
/// classes in proportion to their size (largest remainder), with every class
/// keeping at least one sample on each side. Both halves keep manifest order.
pub fn split(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Data(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let classes: Vec<Vec<usize>> = CLASS_DIRS
        .iter()
        .map(|&(_, label)| (0..manifest.len()).filter(|&i| manifest.entries[i].label == label).collect())
        .collect();
    for (idx, (dir, _)) in classes.iter().zip(CLASS_DIRS) {
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "class {dir} has {} samples; a split needs at least 2",
                idx.len()
            )));
        }
    }

    let target = (manifest.len() as f64 * val_fraction).round() as usize;
    let exact: Vec<f64> = classes.iter().map(|c| c.len() as f64 * val_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..classes.len()).collect();
    by_remainder.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &c in by_remainder.iter().cycle().take(target.saturating_sub(quota.iter().sum())) {
        quota[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; manifest.len()];
    for (mut idx, q) in classes.into_iter().zip(quota) {
        idx.shuffle(&mut rng);
        let n_val = q.clamp(1, idx.len() - 1);
        for &i in &idx[..n_val] {
            in_val[i] = true;
        }
    }
    let pick = |want: bool| DatasetManifest {
        entries: manifest
            .entries
            .iter()
            .zip(&in_val)
            .filter(|(_, &v)| v == want)
            .map(|(e, _)| e.clone())
            .collect(),
        skipped: Vec::new(),
    };
    Ok((pick(false), pick(true)))
}

#[inline]
pub fn normalize_pixel(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Normalized float samples with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub inputs: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Resamples an image to `IMAGE_SIZE` square (area filter) unless it
/// already is, matches the channel count, and normalizes.
pub fn image_to_input(img: &Image, channels: usize) -> Result<Vec<f32>> {
    let img = if img.height == IMAGE_SIZE && img.width == IMAGE_SIZE {
        img.with_channels(channels)?
    } else {
        resize(img, IMAGE_SIZE, IMAGE_SIZE, Interpolation::Area).with_channels(channels)?
    };
    Ok(img.data.iter().map(|&v| normalize_pixel(v)).collect())
}

pub fn to_labeled_set(manifest: &DatasetManifest, channels: usize) -> Result<LabeledSet> {
    let mut data = Vec::with_capacity(manifest.len() * IMAGE_SIZE * IMAGE_SIZE * channels);
    let mut labels = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        data.extend(image_to_input(&e.load()?, channels)?);
        labels.push(e.label.index());
    }
    let shape = Shape::new(manifest.len(), IMAGE_SIZE, IMAGE_SIZE, channels);
    Ok(LabeledSet {
        inputs: Tensor::from_vec(shape, data)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn placeholder(n_mask: usize, n_no: usize) -> DatasetManifest {
        let entry = |i: usize, label| ManifestEntry {
            source: ImageSource::File(PathBuf::from(format!("img{i}.png"))),
            label,
            tag: String::new(),
        };
        DatasetManifest {
            entries: (0..n_mask)
                .map(|i| entry(i, Label::Mask))
                .chain((0..n_no).map(|i| entry(n_mask + i, Label::NoMask)))
                .collect(),
            skipped: vec![],
        }
    }

    fn write_img(path: &Path, v: u8) {
        Image::filled(4, 4, 3, v).save_png(path).unwrap();
    }

    #[test]
    fn loads_class_directories() {
        let dir = tempfile::tempdir().unwrap();
        for d in ["mask", "no_mask"] {
            fs::create_dir(dir.path().join(d)).unwrap();
        }
        for name in ["c.png", "a.png", "b.png"] {
            write_img(&dir.path().join("mask").join(name), 10);
        }
        for name in ["x.png", "y.png"] {
            write_img(&dir.path().join("no_mask").join(name), 200);
        }
        fs::write(dir.path().join("no_mask").join("junk.png"), b"not an image").unwrap();

        let m = load_dataset(dir.path()).unwrap();
        assert_eq!(m.counts(), (3, 2));
        assert_eq!(m.skipped.len(), 1);
        let names: Vec<_> = m.entries[..3]
            .iter()
            .map(|e| match &e.source {
                ImageSource::File(p) => p.file_name().unwrap().to_str().unwrap().to_string(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(names, ["a.png", "b.png", "c.png"]);
        assert_eq!(load_dataset(dir.path()).unwrap(), m);

        let set = to_labeled_set(&m, 3).unwrap();
        assert_eq!(set.inputs.shape(), Shape::new(5, 32, 32, 3));
        assert_eq!(set.labels, vec![1, 1, 1, 0, 0]);
        assert_eq!(set.inputs.data()[0], 10.0 / 255.0);
    }

    #[test]
    fn missing_or_empty_class_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("mask")).unwrap();
        write_img(&dir.path().join("mask").join("a.png"), 1);
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
        fs::create_dir(dir.path().join("no_mask")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::Data(_))));
    }

    #[test]
    fn reads_binary_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4, 5, 6]);
        fs::write(&path, bytes).unwrap();
        let img = Image::open(&path).unwrap();
        assert_eq!((img.height, img.width, img.channels), (1, 2, 3));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn split_at_dataset_scale() {
        // 131,055 entries; class balance as in a roughly even dataset
        let m = placeholder(65_528, 65_527);
        let (train, val) = split(&m, 0.1, 3).unwrap();
        assert_eq!(train.len() + val.len(), 131_055);
        assert!(val.len().abs_diff(13_105) <= 1, "{}", val.len());
        assert!(train.len().abs_diff(117_950) <= 1, "{}", train.len());
        let (m_val, n_val) = val.counts();
        assert!(m_val.abs_diff(6_553) <= 1 && n_val.abs_diff(6_553) <= 1);
    }

    #[test]
    fn split_balanced_half() {
        let m = placeholder(5, 5);
        let (train, val) = split(&m, 0.5, 1).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(val.len(), 5);
        let (vm, vn) = val.counts();
        assert!(vm.abs_diff(vn) == 1, "{vm}/{vn}");
        let (a, b) = split(&m, 0.5, 1).unwrap();
        assert_eq!((a, b), (train, val));
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_fraction() {
        assert!(matches!(split(&placeholder(1, 5), 0.2, 0), Err(Error::Data(_))));
        assert!(matches!(split(&placeholder(5, 5), 1.0, 0), Err(Error::Data(_))));
        assert!(matches!(split(&placeholder(5, 5), 0.0, 0), Err(Error::Data(_))));
    }

    #[test]
    fn channel_conversion() {
        let g = Image::new(1, 2, 1, vec![10, 20]).unwrap();
        let rgb = g.with_channels(3).unwrap();
        assert_eq!(rgb.data, vec![10, 10, 10, 20, 20, 20]);
        assert_eq!(rgb.with_channels(1).unwrap(), g);
    }

    #[test]
    fn sample_is_seeded_subset() {
        let m = placeholder(50, 50);
        let s = m.sample(10, 4);
        assert_eq!(s.len(), 10);
        assert_eq!(s, m.sample(10, 4));
        assert_eq!(m.sample(1000, 4).len(), 100);
    }
}
