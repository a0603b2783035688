//! Seeded stand-in for face crops: a noisy skin-toned oval on a noisy
//! background, with a filled rectangle over the lower half of the face for
//! the Mask class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::resize::to_u8;
use super::{DatasetManifest, Image, ImageSource, Label, ManifestEntry, IMAGE_SIZE};
use crate::error::{Error, Result};

/// `n` images (even, >= 2) alternating Mask / No-Mask.
pub fn synth_dataset(n: usize, seed: u64) -> Result<DatasetManifest> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Data(format!("synthetic dataset size must be even and >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Mask } else { Label::NoMask };
            ManifestEntry {
                source: ImageSource::Memory(face(&mut rng, label)),
                label,
                tag: format!("synth-{seed}"),
            }
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        skipped: Vec::new(),
    })
}

fn face(rng: &mut ChaCha8Rng, label: Label) -> Image {
    let s = IMAGE_SIZE as f64;
    let noise = Normal::new(0.0, 10.0).unwrap();
    let background = [rng.gen_range(20.0..235.0), rng.gen_range(20.0..235.0), rng.gen_range(20.0..235.0)];
    let skin = {
        let r = rng.gen_range(150.0..235.0);
        [r, r - rng.gen_range(35.0..70.0), r - rng.gen_range(60.0..110.0)]
    };
    let cx = s / 2.0 + rng.gen_range(-2.5..2.5);
    let cy = s / 2.0 + rng.gen_range(-2.0..2.0);
    let rx = rng.gen_range(8.0..11.0);
    let ry = rng.gen_range(11.0..14.0);
    let eye_y = cy - 0.3 * ry;
    let eye_dx = 0.4 * rx;
    let mask = match rng.gen_range(0..3) {
        0 => [rng.gen_range(70.0..130.0), rng.gen_range(150.0..210.0), rng.gen_range(200.0..250.0)],
        1 => {
            let v = rng.gen_range(205.0..250.0);
            [v, v, v + rng.gen_range(0.0..5.0)]
        }
        _ => [rng.gen_range(20.0..50.0), rng.gen_range(25.0..55.0), rng.gen_range(60.0..90.0)],
    };
    let mask_top = cy + rng.gen_range(0.0..0.15) * ry;
    let mask_bottom = cy + rng.gen_range(0.75..0.95) * ry;
    let mask_half_w = rx * rng.gen_range(0.85..1.0);

    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) <= 1.0;
            let eye = ((fx - (cx - eye_dx)).powi(2) + (fy - eye_y).powi(2) <= 2.0)
                || ((fx - (cx + eye_dx)).powi(2) + (fy - eye_y).powi(2) <= 2.0);
            let mouth = label == Label::NoMask && (fy - (cy + 0.5 * ry)).abs() < 0.8 && (fx - cx).abs() < 0.35 * rx;
            let covered = label == Label::Mask
                && (fy >= mask_top && fy <= mask_bottom)
                && (fx - cx).abs() <= mask_half_w;
            let base = if covered {
                mask
            } else if eye {
                [40.0, 30.0, 30.0]
            } else if mouth {
                [150.0, 50.0, 60.0]
            } else if inside {
                skin
            } else {
                background
            };
            for b in base {
                data.push(to_u8(b + noise.sample(rng)));
            }
        }
    }
    Image::new(IMAGE_SIZE, IMAGE_SIZE, 3, data).expect("fixed geometry")
}
