//! Orthonormal 2D Haar analysis/synthesis on arbitrary-channel tensors.
//!
//! One level of the separable transform with low-pass `L = [1, 1]/sqrt(2)`
//! and high-pass `H = [-1, 1]/sqrt(2)` at stride 2. Blocks are
//! non-overlapping 2x2, so no boundary policy is needed; inputs must have
//! even height and width. Subband `XY` applies filter `X` along the
//! vertical axis and `Y` along the horizontal axis (LH = low vertical /
//! high horizontal).
//!
//! Because the transform is orthonormal, the adjoint of `dwt` is `idwt`
//! applied to gradient subbands and vice versa; the backward operations
//! below are thin wrappers that make that explicit at call sites.

use crate::tensor::Tensor;
use crate::{Error, Result};

/// The four subbands of one decomposition level. All share the shape
/// `channels x H/2 x W/2` of the half-resolution grid.
#[derive(Debug, Clone)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubbandSet {
    pub fn zeros_like(other: &SubbandSet) -> SubbandSet {
        let (c, h, w) = other.ll.shape();
        SubbandSet {
            ll: Tensor::zeros(c, h, w),
            lh: Tensor::zeros(c, h, w),
            hl: Tensor::zeros(c, h, w),
            hh: Tensor::zeros(c, h, w),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.ll.shape()
    }

    fn check_consistent(&self) -> Result<()> {
        let s = self.ll.shape();
        if self.lh.shape() != s || self.hl.shape() != s || self.hh.shape() != s {
            return Err(Error::Dimension(
                "subband shapes differ within one SubbandSet".into(),
            ));
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.ll.norm_sq() + self.lh.norm_sq() + self.hl.norm_sq() + self.hh.norm_sq()
    }
}

fn check_even(f: &Tensor) -> Result<()> {
    if f.h % 2 != 0 || f.w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "haar transform needs even dims, got {}x{}",
            f.h, f.w
        )));
    }
    Ok(())
}

/// One analysis level. For each 2x2 block
/// `[a b; c d]` (a = top-left, b = top-right, c = bottom-left):
/// `LL = (a+b+c+d)/2`, `LH = ((b-a)+(d-c))/2`, `HL = ((c+d)-(a+b))/2`,
/// `HH = (a-b-c+d)/2`.
pub fn dwt(f: &Tensor) -> Result<SubbandSet> {
    check_even(f)?;
    let (c, h, w) = f.shape();
    let (hh2, ww2) = (h / 2, w / 2);
    let mut out = SubbandSet {
        ll: Tensor::zeros(c, hh2, ww2),
        lh: Tensor::zeros(c, hh2, ww2),
        hl: Tensor::zeros(c, hh2, ww2),
        hh: Tensor::zeros(c, hh2, ww2),
    };
    for ch in 0..c {
        let src = f.plane(ch);
        for by in 0..hh2 {
            let r0 = 2 * by * w;
            let r1 = r0 + w;
            for bx in 0..ww2 {
                let a = src[r0 + 2 * bx];
                let b = src[r0 + 2 * bx + 1];
                let cc = src[r1 + 2 * bx];
                let d = src[r1 + 2 * bx + 1];
                let i = (ch * hh2 + by) * ww2 + bx;
                out.ll.data[i] = (a + b + cc + d) * 0.5;
                out.lh.data[i] = ((b - a) + (d - cc)) * 0.5;
                out.hl.data[i] = ((cc + d) - (a + b)) * 0.5;
                out.hh.data[i] = (a - b - cc + d) * 0.5;
            }
        }
    }
    Ok(out)
}

/// Exact orthonormal synthesis: recovers each 2x2 block from its four
/// subband coefficients.
pub fn idwt(s: &SubbandSet) -> Result<Tensor> {
    s.check_consistent()?;
    let (c, hh2, ww2) = s.ll.shape();
    let (h, w) = (hh2 * 2, ww2 * 2);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for by in 0..hh2 {
            for bx in 0..ww2 {
                let i = (ch * hh2 + by) * ww2 + bx;
                let ll = s.ll.data[i];
                let lh = s.lh.data[i];
                let hl = s.hl.data[i];
                let hh = s.hh.data[i];
                let base = (ch * h + 2 * by) * w + 2 * bx;
                out.data[base] = (ll - lh - hl + hh) * 0.5;
                out.data[base + 1] = (ll + lh - hl - hh) * 0.5;
                out.data[base + w] = (ll - lh + hl - hh) * 0.5;
                out.data[base + w + 1] = (ll + lh + hl + hh) * 0.5;
            }
        }
    }
    Ok(out)
}

/// Adjoint of `dwt`: maps gradient subbands back to a gradient over the
/// analysis input. Orthonormality makes this identical to `idwt`.
pub fn dwt_backward(grad: &SubbandSet) -> Result<Tensor> {
    idwt(grad)
}

/// Adjoint of `idwt`: maps a gradient over the synthesis output back to
/// gradient subbands. Orthonormality makes this identical to `dwt`.
pub fn idwt_backward(grad_out: &Tensor) -> Result<SubbandSet> {
    dwt(grad_out)
}

/// Convenience: LL subband only (used for repeated low-pass chains).
pub fn dwt_ll(f: &Tensor) -> Result<Tensor> {
    Ok(dwt(f)?.ll)
}

/// Adjoint of `dwt_ll`: synthesis from an LL gradient with zero
/// high-frequency subbands.
pub fn dwt_ll_backward(grad_ll: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grad_ll.shape();
    let zero = || Tensor::zeros(c, h, w);
    idwt(&SubbandSet {
        ll: grad_ll.clone(),
        lh: zero(),
        hl: zero(),
        hh: zero(),
    })
}
