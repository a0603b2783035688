//! Integer-only kernels. Nothing in this file touches floating point; a unit
//! test scans the source to keep it that way.
//!
//! Activations are int8 with a per-tensor zero point. Products accumulate in
//! int32, which cannot overflow while the reduction length stays at or below
//! [`MAX_REDUCTION`]: each term is bounded by 255 * 127 in magnitude. The
//! bias is added with saturation afterwards.

use crate::netgraph::{ConvGeom, PoolGeom};
use crate::quantizer::{QuantConv, RequantParams};

/// Largest `kh * kw * c_in` the int32 accumulator supports.
pub const MAX_REDUCTION: usize = 1 << 16;

/// `acc * M` for the fixed-point multiplier `M`: the 64-bit product is
/// shifted right by `31 + shift` bits, rounding half away from zero.
#[inline]
pub fn requantize(acc: i32, rq: RequantParams) -> i32 {
    let prod = acc as i64 * rq.multiplier as i64;
    let total = 31 + rq.shift;
    let scaled = if total <= 0 {
        prod
    } else if total >= 63 {
        // |prod| < 2^62, so the quotient rounds to zero
        0
    } else {
        let half = 1i64 << (total - 1);
        if prod >= 0 {
            (prod + half) >> total
        } else {
            -((-prod + half) >> total)
        }
    };
    scaled.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Requantizes an accumulator into the output's int8 range; relu raises
/// the floor to the output zero point.
#[inline]
fn to_output(acc: i32, rq: RequantParams, zp_out: i32, lo: i32) -> i8 {
    requantize(acc, rq).saturating_add(zp_out).clamp(lo, 127) as i8
}

/// Lower clamp bound for an output with zero point `zp_out`.
#[inline]
pub fn clamp_floor(zp_out: i32, relu: bool) -> i32 {
    if relu {
        zp_out.max(-128)
    } else {
        -128
    }
}

/// One sample's convolution. Output pixel `p` is written to
/// `out[p * ldc..p * ldc + out_c]`, so two convs can fill channel slices of
/// a shared concatenated output.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[i8],
    g: &ConvGeom,
    layer: &QuantConv,
    zp_in: i32,
    zp_out: i32,
    relu: bool,
    out: &mut [i8],
    ldc: usize,
) {
    let k = g.k();
    let cout = g.out_c;
    let w = layer.weights.data();
    let lo = clamp_floor(zp_out, relu);
    let mut patch = vec![0i32; k];
    let mut acc = vec![0i32; cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            // input patch with the zero point removed; padding contributes 0
            let mut idx = 0;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w;
                    let dst = &mut patch[idx..idx + g.in_c];
                    if inside {
                        let src = ((iy as usize) * g.in_w + ix as usize) * g.in_c;
                        for (d, &s) in dst.iter_mut().zip(&x[src..src + g.in_c]) {
                            *d = s as i32 - zp_in;
                        }
                    } else {
                        dst.fill(0);
                    }
                    idx += g.in_c;
                }
            }
            acc.fill(0);
            for (kk, &xv) in patch.iter().enumerate() {
                if xv == 0 {
                    continue;
                }
                let row = &w[kk * cout..(kk + 1) * cout];
                for (a, &wv) in acc.iter_mut().zip(row) {
                    *a += xv * wv as i32;
                }
            }
            let p = oy * g.out_w + ox;
            let dst = &mut out[p * ldc..p * ldc + cout];
            for (oc, d) in dst.iter_mut().enumerate() {
                let total = acc[oc].saturating_add(layer.bias[oc]);
                *d = to_output(total, layer.requant[oc], zp_out, lo);
            }
        }
    }
}

/// One sample's fully connected layer.
pub fn dense(x: &[i8], layer: &QuantConv, zp_in: i32, zp_out: i32, relu: bool, out: &mut [i8]) {
    let units = layer.out_channels();
    let w = layer.weights.data();
    let lo = clamp_floor(zp_out, relu);
    let mut acc = vec![0i32; units];
    for (i, &q) in x.iter().enumerate() {
        let xv = q as i32 - zp_in;
        if xv == 0 {
            continue;
        }
        for (a, &wv) in acc.iter_mut().zip(&w[i * units..(i + 1) * units]) {
            *a += xv * wv as i32;
        }
    }
    for (u, d) in out[..units].iter_mut().enumerate() {
        let total = acc[u].saturating_add(layer.bias[u]);
        *d = to_output(total, layer.requant[u], zp_out, lo);
    }
}

/// One sample's max pool; quantization passes through unchanged.
pub fn maxpool(x: &[i8], g: &PoolGeom, out: &mut [i8]) {
    let c = g.c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let dst = &mut out[(oy * g.out_w + ox) * c..(oy * g.out_w + ox + 1) * c];
            dst.fill(i8::MIN);
            for dy in 0..g.pool {
                for dx in 0..g.pool {
                    let src = ((oy * g.stride + dy) * g.in_w + ox * g.stride + dx) * c;
                    for (d, &s) in dst.iter_mut().zip(&x[src..src + c]) {
                        *d = (*d).max(s);
                    }
                }
            }
        }
    }
}

/// One sample's global average pool: per-channel mean of the int8 values,
/// rounded half away from zero. The mean of affine values shares their
/// scale and zero point.
pub fn global_avg_pool(x: &[i8], hw: usize, c: usize, out: &mut [i8]) {
    let n = hw as i64;
    for (ch, d) in out[..c].iter_mut().enumerate() {
        let sum: i64 = (0..hw).map(|p| x[p * c + ch] as i64).sum();
        let mean = if sum >= 0 { (sum + n / 2) / n } else { -((-sum + n / 2) / n) };
        *d = mean.clamp(-128, 127) as i8;
    }
}
