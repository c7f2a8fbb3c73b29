//! 5-tap separable Gaussian blur with reflect-101 padding.
//!
//! The backward pass scatters through the same index map the forward pass
//! gathers through, so it is the exact adjoint including boundary handling
//! (a symmetric kernel alone is not enough: reflection makes the operator
//! non-symmetric near edges).

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Normalized taps `k_i ∝ exp(-i^2 / (2 sigma^2))` for offsets -2..=2.
pub fn gaussian_kernel5(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (idx, tap) in k.iter_mut().enumerate() {
        let o = idx as f64 - 2.0;
        *tap = (-o * o / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = k.iter().sum();
    for tap in k.iter_mut() {
        *tap /= sum;
    }
    k
}

// reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut j = i;
    if j < 0 {
        j = -j;
    }
    if j >= n {
        j = 2 * n - 2 - j;
    }
    j as usize
}

fn check(img: &Tensor, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    if img.h < 3 || img.w < 3 {
        return Err(Error::Dimension(format!(
            "blur needs at least 3x3 images, got {}x{}",
            img.h, img.w
        )));
    }
    Ok(())
}

fn pass_rows(src: &Tensor, k: &[f64; 5]) -> Tensor {
    let (c, h, w) = src.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &tap) in k.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - 2, w);
                    acc += tap * src.at(ch, y, sx);
                }
                *out.at_mut(ch, y, x) = acc;
            }
        }
    }
    out
}

fn pass_cols(src: &Tensor, k: &[f64; 5]) -> Tensor {
    let (c, h, w) = src.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &tap) in k.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - 2, h);
                    acc += tap * src.at(ch, sy, x);
                }
                *out.at_mut(ch, y, x) = acc;
            }
        }
    }
    out
}

fn pass_rows_adjoint(grad: &Tensor, k: &[f64; 5]) -> Tensor {
    let (c, h, w) = grad.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let g = grad.at(ch, y, x);
                for (t, &tap) in k.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - 2, w);
                    *out.at_mut(ch, y, sx) += tap * g;
                }
            }
        }
    }
    out
}

fn pass_cols_adjoint(grad: &Tensor, k: &[f64; 5]) -> Tensor {
    let (c, h, w) = grad.shape();
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let g = grad.at(ch, y, x);
                for (t, &tap) in k.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - 2, h);
                    *out.at_mut(ch, sy, x) += tap * g;
                }
            }
        }
    }
    out
}

/// Horizontal then vertical pass with a shared 5-tap kernel.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    check(img, sigma)?;
    let k = gaussian_kernel5(sigma);
    Ok(pass_cols(&pass_rows(img, &k), &k))
}

/// Exact adjoint of `gaussian_blur` (vertical adjoint first, then
/// horizontal, mirroring the forward composition order).
pub fn gaussian_blur_backward(grad_out: &Tensor, sigma: f64) -> Result<Tensor> {
    check(grad_out, sigma)?;
    let k = gaussian_kernel5(sigma);
    Ok(pass_rows_adjoint(&pass_cols_adjoint(grad_out, &k), &k))
}
