use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::resize::{resize, to_u8, Interpolation};
use super::{DatasetManifest, Image, ImageSource, ManifestEntry, IMAGE_SIZE};
use crate::error::Result;

/// One `IMAGE_SIZE` square output per interpolation method.
pub fn augment_interpolation(img: &Image) -> Vec<(Interpolation, Image)> {
    Interpolation::ALL
        .into_iter()
        .map(|m| (m, resize(img, IMAGE_SIZE, IMAGE_SIZE, m)))
        .collect()
}

/// Which geometric/photometric perturbations [`augment_standard`] draws.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardAugment {
    /// Mirror horizontally with probability 1/2.
    pub flip: bool,
    /// Rotation drawn uniformly from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
    /// Brightness factor drawn uniformly from `[1 - b, 1 + b]`.
    pub max_brightness: f64,
}

impl Default for StandardAugment {
    fn default() -> Self {
        StandardAugment {
            flip: true,
            max_rotation_deg: 15.0,
            max_brightness: 0.2,
        }
    }
}

impl StandardAugment {
    pub fn flip_only() -> Self {
        StandardAugment {
            flip: true,
            max_rotation_deg: 0.0,
            max_brightness: 0.0,
        }
    }
}

/// `ops_per_image` seeded variants of `img` (same size as the input).
pub fn augment_standard(img: &Image, seed: u64, ops_per_image: usize, cfg: &StandardAugment) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ops_per_image)
        .map(|_| {
            let flip = cfg.flip && rng.gen_bool(0.5);
            let angle = if cfg.max_rotation_deg > 0.0 {
                rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
            } else {
                0.0
            };
            let gain = if cfg.max_brightness > 0.0 {
                rng.gen_range(1.0 - cfg.max_brightness..=1.0 + cfg.max_brightness)
            } else {
                1.0
            };
            let mut out = if flip { flip_horizontal(img) } else { img.clone() };
            if angle != 0.0 {
                out = rotate(&out, angle);
            }
            if gain != 1.0 {
                out.data.iter_mut().for_each(|v| *v = to_u8(*v as f64 * gain));
            }
            out
        })
        .collect()
}

/// Standard augmentation followed by interpolation augmentation over a whole
/// manifest.
///
/// Each source image contributes itself plus `standard_ops` seeded variants,
/// and every one of those is resampled with all five interpolation methods,
/// so the output has `5 * (1 + standard_ops)` entries per input. Entries are
/// produced in manifest order and tagged `tag/std{j}/{method}`.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    standard_ops: usize,
    cfg: &StandardAugment,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut out = DatasetManifest::default();
    out.entries.reserve(manifest.len() * 5 * (1 + standard_ops));
    for (i, e) in manifest.entries.iter().enumerate() {
        let img = e.load()?;
        let variant_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
        let mut variants = vec![img.clone()];
        variants.extend(augment_standard(&img, variant_seed, standard_ops, cfg));
        for (j, v) in variants.iter().enumerate() {
            for (method, resized) in augment_interpolation(v) {
                out.entries.push(ManifestEntry {
                    source: ImageSource::Memory(resized),
                    label: e.label,
                    tag: format!("{}/std{j}/{}", e.tag, method.name()),
                });
            }
        }
    }
    Ok(out)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    let (w, c) = (img.width, img.channels);
    for y in 0..img.height {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out.data[dst..dst + c].copy_from_slice(&img.data[src..src + c]);
        }
    }
    out
}

/// Reflect-101 index into `0..n` (`..2 1 | 0 1 2 .. n-1 | n-2 ..`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Rotation about the image centre, bilinear sampling, reflected border.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse mapping: output pixel -> source coordinate
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (tx, ty) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let xs = [reflect(x0, w), reflect(x0 + 1, w)];
            let ys = [reflect(y0, h), reflect(y0 + 1, h)];
            for ch in 0..c {
                let p = |yy: usize, xx: usize| img.get(yy, xx, ch) as f64;
                let top = p(ys[0], xs[0]) * (1.0 - tx) + p(ys[0], xs[1]) * tx;
                let bottom = p(ys[1], xs[0]) * (1.0 - tx) + p(ys[1], xs[1]) * tx;
                data.push(to_u8(top * (1.0 - ty) + bottom * ty));
            }
        }
    }
    Image {
        data,
        ..img.clone()
    }
}
