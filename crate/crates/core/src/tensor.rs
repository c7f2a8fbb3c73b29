//! Planar channel-major tensors backed by flat `f64` buffers.
//!
//! Images and feature maps share one representation: `channels x height x
//! width`, row-major within a channel. Image-valued tensors keep their
//! elements in `[0, 1]`; feature maps are unconstrained. All arithmetic is
//! done in `f64` so finite-difference tests and reductions are stable.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "buffer length must match c*h*w");
        Tensor { c, h, w, data }
    }

    pub fn full(c: usize, h: usize, w: usize, v: f64) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Immutable view of one channel plane.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in zip");
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a - b)
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in dot");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Checks image-value range `[0, 1]`.
    pub fn is_image_valued(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Concatenates along the channel axis; spatial shapes must agree.
    pub fn concat_channels(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            (self.h, self.w),
            (other.h, other.w),
            "spatial shape mismatch in concat"
        );
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            c: self.c + other.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Splits the first `c_first` channels from the rest.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        assert!(c_first <= self.c, "split beyond channel count");
        let n = self.h * self.w;
        let (a, b) = self.data.split_at(c_first * n);
        (
            Tensor {
                c: c_first,
                h: self.h,
                w: self.w,
                data: a.to_vec(),
            },
            Tensor {
                c: self.c - c_first,
                h: self.h,
                w: self.w,
                data: b.to_vec(),
            },
        )
    }

    pub fn expect_shape(&self, c: usize, h: usize, w: usize, what: &str) -> Result<()> {
        if self.shape() != (c, h, w) {
            return Err(Error::Dimension(format!(
                "{what}: expected {c}x{h}x{w}, got {}x{}x{}",
                self.c, self.h, self.w
            )));
        }
        Ok(())
    }

    pub fn expect_channels(&self, c: usize, what: &str) -> Result<()> {
        if self.c != c {
            return Err(Error::Dimension(format!(
                "{what}: expected {c} channels, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_major_row_major() {
        let mut t = Tensor::zeros(2, 3, 4);
        *t.at_mut(1, 2, 3) = 7.0;
        assert_eq!(t.data[(1 * 3 + 2) * 4 + 3], 7.0);
        assert_eq!(t.at(1, 2, 3), 7.0);
        assert_eq!(t.at(0, 0, 0), 0.0);
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(2, 2, 2, (0..8).map(f64::from).collect());
        let cat = a.concat_channels(&b);
        assert_eq!(cat.shape(), (3, 2, 2));
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn norms_and_linf() {
        let t = Tensor::from_vec(1, 1, 3, vec![3.0, -4.0, 0.0]);
        assert_eq!(t.norm_sq(), 25.0);
        assert_eq!(t.norm(), 5.0);
        assert_eq!(t.linf(), 4.0);
    }

    #[test]
    fn image_valued_range_check() {
        let ok = Tensor::from_vec(1, 1, 2, vec![0.0, 1.0]);
        let bad = Tensor::from_vec(1, 1, 2, vec![0.0, 1.0 + 1e-9]);
        assert!(ok.is_image_valued());
        assert!(!bad.is_image_valued());
    }
}
