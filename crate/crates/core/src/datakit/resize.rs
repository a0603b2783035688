//! Separable resampling with five interpolation kernels.
//!
//! All kernels use half-pixel-centre mapping (`src = (dst + 0.5) * scale -
//! 0.5`), replicate the border, and round results half away from zero into
//! `[0, 255]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::Image;
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
    Lanczos4,
}

impl Interpolation {
    pub const ALL: [Interpolation; 5] = [
        Interpolation::Area,
        Interpolation::Bicubic,
        Interpolation::Nearest,
        Interpolation::Bilinear,
        Interpolation::Lanczos4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
            Interpolation::Area => "area",
            Interpolation::Lanczos4 => "lanczos4",
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Interpolation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::NotFound(format!("interpolation method `{s}`")))
    }
}

const CUBIC_A: f64 = -0.75;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

fn lanczos4(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= 4.0 {
        return 0.0;
    }
    let px = PI * x;
    4.0 * px.sin() * (px / 4.0).sin() / (px * px)
}

/// Per-output-coordinate list of `(source index, weight)`.
type Taps = Vec<Vec<(usize, f64)>>;

fn taps(src: usize, dst: usize, method: Interpolation) -> Taps {
    let scale = src as f64 / dst as f64;
    let last = src as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..dst)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            match method {
                Interpolation::Nearest => {
                    let i = ((d as f64 + 0.5) * scale).floor() as isize;
                    vec![(clamp(i), 1.0)]
                }
                Interpolation::Bilinear => {
                    let x0 = center.floor();
                    let t = center - x0;
                    let x0 = x0 as isize;
                    vec![(clamp(x0), 1.0 - t), (clamp(x0 + 1), t)]
                }
                Interpolation::Bicubic => {
                    let x0 = center.floor();
                    let t = center - x0;
                    let x0 = x0 as isize;
                    (-1..=2).map(|k| (clamp(x0 + k), cubic(t - k as f64))).collect()
                }
                Interpolation::Lanczos4 => {
                    let x0 = center.floor();
                    let t = center - x0;
                    let x0 = x0 as isize;
                    let raw: Vec<(usize, f64)> = (-3..=4).map(|k| (clamp(x0 + k), lanczos4(t - k as f64))).collect();
                    let sum: f64 = raw.iter().map(|t| t.1).sum();
                    raw.into_iter().map(|(i, w)| (i, w / sum)).collect()
                }
                Interpolation::Area => {
                    let lo = d as f64 * scale;
                    let hi = lo + scale;
                    let first = lo.floor() as usize;
                    let end = (hi.ceil() as usize).min(src);
                    (first..end)
                        .filter_map(|i| {
                            let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                            (overlap > 0.0).then_some((i, overlap / scale))
                        })
                        .collect()
                }
            }
        })
        .collect()
}

pub fn resize(img: &Image, out_h: usize, out_w: usize, method: Interpolation) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let xt = taps(w, out_w, method);
    let yt = taps(h, out_h, method);

    let mut horiz = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (x, tx) in xt.iter().enumerate() {
            for ch in 0..c {
                horiz[(y * out_w + x) * c + ch] = tx
                    .iter()
                    .map(|&(sx, wt)| wt * img.data[(y * w + sx) * c + ch] as f64)
                    .sum();
            }
        }
    }

    let mut data = Vec::with_capacity(out_h * out_w * c);
    for ty in &yt {
        for x in 0..out_w {
            for ch in 0..c {
                let v: f64 = ty.iter().map(|&(sy, wt)| wt * horiz[(sy * out_w + x) * c + ch]).sum();
                data.push(to_u8(v));
            }
        }
    }
    Image {
        height: out_h,
        width: out_w,
        channels: c,
        data,
    }
}

#[inline]
pub(crate) fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, data: Vec<u8>) -> Image {
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn bilinear_identity_is_exact_copy() {
        let data: Vec<u8> = (0..32 * 32 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = Image::new(32, 32, 3, data).unwrap();
        assert_eq!(resize(&img, 32, 32, Interpolation::Bilinear), img);
        assert_eq!(resize(&img, 32, 32, Interpolation::Bicubic), img);
        assert_eq!(resize(&img, 32, 32, Interpolation::Lanczos4), img);
        assert_eq!(resize(&img, 32, 32, Interpolation::Area), img);
        assert_eq!(resize(&img, 32, 32, Interpolation::Nearest), img);
    }

    #[test]
    fn area_downscale_is_box_mean() {
        let img = gray(2, 2, vec![10, 20, 30, 40]);
        assert_eq!(resize(&img, 1, 1, Interpolation::Area).data, vec![25]);
    }

    #[test]
    fn nearest_upsample() {
        let img = gray(1, 1, vec![7]);
        assert_eq!(resize(&img, 2, 2, Interpolation::Nearest).data, vec![7; 4]);
    }

    #[test]
    fn bilinear_upsample_interpolates() {
        let img = gray(1, 2, vec![0, 100]);
        // centers at -0.25, 0.25, 0.75, 1.25 -> 0, 25, 75, 100
        assert_eq!(resize(&img, 1, 4, Interpolation::Bilinear).data, vec![0, 25, 75, 100]);
    }

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for t in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|k| cubic(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
    }

    #[test]
    fn parses_method_names() {
        for m in Interpolation::ALL {
            assert_eq!(m.name().parse::<Interpolation>().unwrap(), m);
        }
        assert!("cubic-ish".parse::<Interpolation>().is_err());
    }

    proptest! {
        #[test]
        fn constant_images_stay_constant(v in any::<u8>(), h in 1usize..40, w in 1usize..40, oh in 1usize..40, ow in 1usize..40) {
            let img = Image::new(h, w, 3, vec![v; h * w * 3]).unwrap();
            for m in Interpolation::ALL {
                let out = resize(&img, oh, ow, m);
                prop_assert_eq!(out.height, oh);
                prop_assert_eq!(out.width, ow);
                prop_assert!(out.data.iter().all(|&p| p == v), "{}", m);
            }
        }
    }
}
