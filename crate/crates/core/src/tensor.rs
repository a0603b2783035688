//! NHWC tensors and the affine quantization map `r = scale * (q - zero_point)`.
//!
//! Every value in the toolchain (images, activations, weights) travels as a
//! [`Tensor`]. Weights reuse the same 4-D layout: a conv kernel is stored as
//! `(kh, kw, c_in, c_out)` and a dense matrix as `(1, 1, in, out)`, so the
//! last axis is always the output channel for per-channel quantization.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Four-dimensional extent in NHWC order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_batch(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Dense row-major NHWC array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Element kind tag, mostly for diagnostics and container headers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemKind {
    Float32,
    Int8,
    Int32,
}

pub trait Element: Copy + Default + Send + Sync + 'static {
    const KIND: ElemKind;
}

impl Element for f32 {
    const KIND: ElemKind = ElemKind::Float32;
}
impl Element for f64 {
    // f64 tensors exist only for gradient checking; they report as float.
    const KIND: ElemKind = ElemKind::Float32;
}
impl Element for i8 {
    const KIND: ElemKind = ElemKind::Int8;
}
impl Element for i32 {
    const KIND: ElemKind = ElemKind::Int32;
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::default(); shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn kind(&self) -> ElemKind {
        T::KIND
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.shape.index(n, y, x, c)]
    }

    /// Same data viewed under a different shape of equal length.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Copy of batch item `i` as a batch of one.
    pub fn item(&self, i: usize) -> Tensor<T> {
        let len = self.shape.item_len();
        Tensor {
            shape: self.shape.with_batch(1),
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    /// Gathers the listed batch items into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Tensor<T> {
        let len = self.shape.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        Tensor {
            shape: self.shape.with_batch(indices.len()),
            data,
        }
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Activation quantization: one scale and zero-point for a whole tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActQuant {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActQuant {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        let qp = ActQuant { scale, zero_point };
        qp.validate()?;
        Ok(qp)
    }

    pub fn validate(&self) -> Result<()> {
        validate_scale(self.scale)?;
        if !(-128..=127).contains(&self.zero_point) {
            return Err(Error::InvalidQuantParams(format!(
                "zero point {} outside [-128, 127]",
                self.zero_point
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn quantize(&self, r: f32) -> i8 {
        quantize_scalar(r as f64, self.scale as f64, self.zero_point)
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f32 {
        dequantize_scalar(q, self.scale as f64, self.zero_point) as f32
    }
}

/// Scale/zero-point for a tensor, either per tensor (asymmetric) or per
/// output channel (symmetric, zero-point fixed at 0).
#[derive(Clone, Debug, PartialEq)]
pub enum QuantParams {
    PerTensor(ActQuant),
    PerChannel { scales: Vec<f32> },
}

impl QuantParams {
    pub fn per_tensor(scale: f32, zero_point: i32) -> Self {
        QuantParams::PerTensor(ActQuant { scale, zero_point })
    }

    pub fn per_channel(scales: Vec<f32>) -> Self {
        QuantParams::PerChannel { scales }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            QuantParams::PerTensor(qp) => qp.validate(),
            QuantParams::PerChannel { scales } => {
                if scales.is_empty() {
                    return Err(Error::InvalidQuantParams(
                        "per-channel params with no scales".into(),
                    ));
                }
                scales.iter().try_for_each(|&s| validate_scale(s))
            }
        }
    }

    /// (scale, zero_point) that applies to channel `c`.
    #[inline]
    fn channel(&self, c: usize) -> (f64, i32) {
        match self {
            QuantParams::PerTensor(qp) => (qp.scale as f64, qp.zero_point),
            QuantParams::PerChannel { scales } => (scales[c] as f64, 0),
        }
    }

    fn check_layout(&self, shape: Shape) -> Result<()> {
        self.validate()?;
        if let QuantParams::PerChannel { scales } = self {
            if scales.len() != shape.c {
                return Err(Error::ShapeMismatch(format!(
                    "{} per-channel scales for {} output channels",
                    scales.len(),
                    shape.c
                )));
            }
        }
        Ok(())
    }
}

fn validate_scale(scale: f32) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidQuantParams(format!(
            "scale must be positive and finite, got {scale}"
        )))
    }
}

/// `clamp(round(r / scale) + zero_point, -128, 127)`, rounding half away
/// from zero.
#[inline]
pub fn quantize_scalar(r: f64, scale: f64, zero_point: i32) -> i8 {
    let q = (r / scale).round() + zero_point as f64;
    q.clamp(-128.0, 127.0) as i8
}

#[inline]
pub fn dequantize_scalar(q: i8, scale: f64, zero_point: i32) -> f64 {
    scale * (q as i32 - zero_point) as f64
}

pub fn quantize_affine(t: &Tensor<f32>, qp: &QuantParams) -> Result<Tensor<i8>> {
    qp.check_layout(t.shape())?;
    let c = t.shape().c;
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (scale, zp) = qp.channel(i % c);
            quantize_scalar(r as f64, scale, zp)
        })
        .collect();
    Tensor::from_vec(t.shape(), data)
}

pub fn dequantize(t: &Tensor<i8>, qp: &QuantParams) -> Result<Tensor<f32>> {
    qp.check_layout(t.shape())?;
    let c = t.shape().c;
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let (scale, zp) = qp.channel(i % c);
            dequantize_scalar(q, scale, zp) as f32
        })
        .collect();
    Tensor::from_vec(t.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(r: f32) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![r]).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let q = |r, s, z| quantize_affine(&scalar(r), &QuantParams::per_tensor(s, z)).unwrap().data()[0];
        assert_eq!(q(1.0, 0.5, 0), 2);
        assert_eq!(q(0.0, 0.37, -3), -3);
        assert_eq!(q(200.0, 1.0, 0), 127);
        assert_eq!(q(-200.0, 1.0, 0), -128);
        // half away from zero
        assert_eq!(q(0.25, 0.5, 0), 1);
        assert_eq!(q(-0.25, 0.5, 0), -1);
    }

    #[test]
    fn dequantize_examples() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2i8, 5]).unwrap();
        let r = dequantize(&t, &QuantParams::per_tensor(0.5, 5)).unwrap();
        assert_eq!(r.data(), &[-1.5, 0.0]);
        let r = dequantize(&t, &QuantParams::per_tensor(0.5, 0)).unwrap();
        assert_eq!(r.data()[0], 1.0);
    }

    #[test]
    fn rejects_bad_params() {
        let t = scalar(1.0);
        assert!(matches!(
            quantize_affine(&t, &QuantParams::per_tensor(0.0, 0)),
            Err(Error::InvalidQuantParams(_))
        ));
        assert!(matches!(
            quantize_affine(&t, &QuantParams::per_tensor(-1.0, 0)),
            Err(Error::InvalidQuantParams(_))
        ));
        let w = Tensor::<f32>::zeros(Shape::new(3, 3, 2, 4));
        assert!(matches!(
            quantize_affine(&w, &QuantParams::per_channel(vec![1.0; 3])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn per_channel_uses_last_axis() {
        let w = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 1.0, -2.0, 2.0]).unwrap();
        let q = quantize_affine(&w, &QuantParams::per_channel(vec![0.5, 0.25])).unwrap();
        assert_eq!(q.data(), &[2, 4, -4, 8]);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![0f32; 3]).is_err());
    }

    proptest! {
        #[test]
        fn int8_roundtrip_is_identity(q in any::<i8>(), scale in 1e-4f32..10.0, zp in -128i32..=127) {
            let qp = ActQuant { scale, zero_point: zp };
            prop_assert_eq!(qp.quantize(qp.dequantize(q)), q);
        }

        #[test]
        fn quantize_is_monotone(a in -500f32..500.0, b in -500f32..500.0, scale in 1e-3f32..4.0, zp in -128i32..=127) {
            let qp = ActQuant { scale, zero_point: zp };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(qp.quantize(lo) <= qp.quantize(hi));
        }

        #[test]
        fn roundtrip_error_bounded(scale in 1e-3f64..4.0, zp in -128i32..=127, u in 0f64..1.0) {
            let lo = scale * (-128 - zp) as f64;
            let hi = scale * (127 - zp) as f64;
            let r = lo + u * (hi - lo);
            let back = dequantize_scalar(quantize_scalar(r, scale, zp), scale, zp);
            prop_assert!((back - r).abs() <= scale / 2.0);
        }
    }
}
