//! Differentiable baseline JPEG simulation (4:4:4, straight-through rounding).
//!
//! Forward pipeline, all in `[0, 1]` units: RGB -> full-range YCbCr, level
//! shift by 0.5, per-plane 8x8 orthonormal type-II DCT, division by the
//! standard base quantization tables scaled with the libjpeg quality rule,
//! rounding (straight-through in the backward pass), dequantization,
//! inverse DCT, YCbCr -> RGB, clip to `[0, 1]`. No chroma subsampling, so
//! the operator is resolution-uniform and every stage except rounding and
//! the final clip is exactly invertible.
//!
//! Tables are kept in the conventional 0..255 integer scale and divided by
//! 255 at use, which makes `round(c / (Q/255))` agree bit-for-bit with a
//! real codec's `round(c_255 / Q)`.
//!
//! The backward pass applies the literal adjoint of each linear stage
//! (colorspace transposes, DCT/IDCT transposes, quantization scaling
//! cancellation, clip mask) rather than exploiting the algebraic collapse
//! of the round-free chain to the identity, so transpose mistakes are
//! observable in gradient tests.

use std::sync::OnceLock;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Base luminance quantization table (quality 50), zig-zag-free row-major.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Base chrominance quantization table (quality 50).
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// libjpeg quality scaling: integer arithmetic, clamped to [1, 255].
/// Quality 50 reproduces the base tables; quality 100 gives all ones.
pub fn scaled_tables(quality: u32) -> ([u16; 64], [u16; 64]) {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let apply = |base: &[u16; 64]| {
        let mut out = [0u16; 64];
        for (o, &b) in out.iter_mut().zip(base) {
            *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
        }
        out
    };
    (apply(&LUMA_BASE), apply(&CHROMA_BASE))
}

// Full-range YCbCr (JFIF) forward matrix rows; offsets of 0.5 are added to
// Cb and Cr after the linear part.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const M_RGB2YCC: [[f64; 3]; 3] = [
    [KR, KG, KB],
    [-KR / (2.0 - 2.0 * KB), -KG / (2.0 - 2.0 * KB), 0.5],
    [0.5, -KG / (2.0 - 2.0 * KR), -KB / (2.0 - 2.0 * KR)],
];
const M_YCC2RGB: [[f64; 3]; 3] = [
    [1.0, 0.0, 2.0 - 2.0 * KR],
    [
        1.0,
        -KB * (2.0 - 2.0 * KB) / KG,
        -KR * (2.0 - 2.0 * KR) / KG,
    ],
    [1.0, 2.0 - 2.0 * KB, 0.0],
];

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (i, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (((2 * i + 1) as f64) * (u as f64) * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// `F = C X C^T` (orthonormal 2D DCT-II on one 8x8 block).
fn dct8(block: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for u in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for i in 0..8 {
                acc += c[u][i] * block[i][j];
            }
            tmp[u][j] = acc;
        }
    }
    let mut out = [[0.0; 8]; 8];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += c[v][j] * tmp[u][j];
            }
            out[u][v] = acc;
        }
    }
    out
}

/// `X = C^T F C` (exact inverse of `dct8`).
fn idct8(coef: &[[f64; 8]; 8]) -> [[f64; 8]; 8] {
    let c = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for i in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += c[u][i] * coef[u][v];
            }
            tmp[i][v] = acc;
        }
    }
    let mut out = [[0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += c[v][j] * tmp[i][v];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Whether the forward pass quantizes with real rounding or leaves the
/// coefficients untouched. `Smooth` is the function the straight-through
/// backward pass differentiates exactly; gradient verification uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    Ste,
    Smooth,
}

/// Data the backward pass needs (only the clip mask; every other stage is
/// linear with a known adjoint).
pub struct JpegTrace {
    clip_inside: Tensor,
    quality: u32,
}

fn check_dims(img: &Tensor) -> Result<()> {
    img.expect_channels(3, "jpeg input")?;
    if img.h % 8 != 0 || img.w % 8 != 0 {
        return Err(Error::Dimension(format!(
            "jpeg needs dims divisible by 8, got {}x{}",
            img.h, img.w
        )));
    }
    Ok(())
}

fn plane_to_blocks(
    plane: &mut [f64],
    w: usize,
    table: &[u16; 64],
    rounding: Rounding,
) {
    let h = plane.len() / w;
    let mut block = [[0.0; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y][x] = plane[(by + y) * w + bx + x] - 0.5;
                }
            }
            let mut coef = dct8(&block);
            for u in 0..8 {
                for v in 0..8 {
                    let s = f64::from(table[u * 8 + v]) / 255.0;
                    let q = coef[u][v] / s;
                    let q = match rounding {
                        Rounding::Ste => q.round(),
                        Rounding::Smooth => q,
                    };
                    coef[u][v] = q * s;
                }
            }
            let rec = idct8(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = rec[y][x] + 0.5;
                }
            }
        }
    }
}

pub fn diff_jpeg_with_trace(
    img: &Tensor,
    quality: u32,
    rounding: Rounding,
) -> Result<(Tensor, JpegTrace)> {
    check_dims(img)?;
    let (luma_t, chroma_t) = scaled_tables(quality);
    let (h, w) = (img.h, img.w);
    let n = h * w;
    let mut ycc = Tensor::zeros(3, h, w);
    for i in 0..n {
        let rgb = [img.data[i], img.data[n + i], img.data[2 * n + i]];
        for (c, row) in M_RGB2YCC.iter().enumerate() {
            let offset = if c == 0 { 0.0 } else { 0.5 };
            ycc.data[c * n + i] =
                row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2] + offset;
        }
    }
    for c in 0..3 {
        let table = if c == 0 { &luma_t } else { &chroma_t };
        plane_to_blocks(ycc.plane_mut(c), w, table, rounding);
    }
    let mut out = Tensor::zeros(3, h, w);
    let mut clip_inside = Tensor::zeros(3, h, w);
    for i in 0..n {
        let y = ycc.data[i];
        let cb = ycc.data[n + i] - 0.5;
        let cr = ycc.data[2 * n + i] - 0.5;
        for (c, row) in M_YCC2RGB.iter().enumerate() {
            let v = row[0] * y + row[1] * cb + row[2] * cr;
            clip_inside.data[c * n + i] = if (0.0..=1.0).contains(&v) { 1.0 } else { 0.0 };
            out.data[c * n + i] = v.clamp(0.0, 1.0);
        }
    }
    Ok((
        out,
        JpegTrace {
            clip_inside,
            quality,
        },
    ))
}

/// Differentiable JPEG with straight-through rounding.
pub fn diff_jpeg(img: &Tensor, quality: u32) -> Result<Tensor> {
    Ok(diff_jpeg_with_trace(img, quality, Rounding::Ste)?.0)
}

/// Vector-Jacobian product of `diff_jpeg` under the straight-through
/// convention: clip mask, transposed colorspace maps, DCT adjoints, and
/// cancelling quantization scales.
pub fn diff_jpeg_backward(trace: &JpegTrace, grad_out: &Tensor) -> Result<Tensor> {
    let (mask_c, h, w) = trace.clip_inside.shape();
    grad_out.expect_shape(mask_c, h, w, "jpeg grad_out")?;
    let n = h * w;
    let g = grad_out.zip(&trace.clip_inside, |g, m| g * m);

    // Adjoint of YCbCr -> RGB (transpose; offsets vanish in gradients).
    let mut g_ycc = Tensor::zeros(3, h, w);
    for i in 0..n {
        let gv = [g.data[i], g.data[n + i], g.data[2 * n + i]];
        for c in 0..3 {
            g_ycc.data[c * n + i] = M_YCC2RGB[0][c] * gv[0]
                + M_YCC2RGB[1][c] * gv[1]
                + M_YCC2RGB[2][c] * gv[2];
        }
    }

    // Adjoint of the block transform chain: for Y = IDCT(deq(round(q(DCT(X)))))
    // the straight-through backward is DCT -> (scale cancels) -> IDCT.
    let (luma_t, chroma_t) = scaled_tables(trace.quality);
    for c in 0..3 {
        let table = if c == 0 { &luma_t } else { &chroma_t };
        let plane = g_ycc.plane_mut(c);
        let mut block = [[0.0; 8]; 8];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for y in 0..8 {
                    for x in 0..8 {
                        block[y][x] = plane[(by + y) * w + bx + x];
                    }
                }
                // adjoint of IDCT is DCT; then multiply by 1/s (adjoint of
                // dequantize) and by s (adjoint of quantize divide); then
                // adjoint of DCT is IDCT.
                let mut coef = dct8(&block);
                for u in 0..8 {
                    for v in 0..8 {
                        let s = f64::from(table[u * 8 + v]) / 255.0;
                        coef[u][v] = (coef[u][v] * s) / s;
                    }
                }
                let rec = idct8(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        plane[(by + y) * w + bx + x] = rec[y][x];
                    }
                }
            }
        }
    }

    // Adjoint of RGB -> YCbCr.
    let mut g_rgb = Tensor::zeros(3, h, w);
    for i in 0..n {
        let gv = [g_ycc.data[i], g_ycc.data[n + i], g_ycc.data[2 * n + i]];
        for c in 0..3 {
            g_rgb.data[c * n + i] = M_RGB2YCC[0][c] * gv[0]
                + M_RGB2YCC[1][c] * gv[1]
                + M_RGB2YCC[2][c] * gv[2];
        }
    }
    Ok(g_rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn quality_rule_fixed_points() {
        let (l50, c50) = scaled_tables(50);
        assert_eq!(l50, LUMA_BASE);
        assert_eq!(c50, CHROMA_BASE);
        let (l100, c100) = scaled_tables(100);
        assert!(l100.iter().all(|&v| v == 1));
        assert!(c100.iter().all(|&v| v == 1));
        // libjpeg integer arithmetic spot checks.
        let (l10, _) = scaled_tables(10);
        assert_eq!(l10[0], 80); // (16*500+50)/100
        let (l75, _) = scaled_tables(75);
        assert_eq!(l75[0], 8); // (16*50+50)/100
    }

    #[test]
    fn colorspace_matrices_are_inverse_pairs() {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += M_YCC2RGB[i][k] * M_RGB2YCC[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12, "[{i}][{j}] = {acc}");
            }
        }
    }

    #[test]
    fn dct_idct_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut block = [[0.0; 8]; 8];
        for row in block.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let rec = idct8(&dct8(&block));
        for i in 0..8 {
            for j in 0..8 {
                assert!((rec[i][j] - block[i][j]).abs() < 1e-12);
            }
        }
        // Parseval for the orthonormal basis.
        let coef = dct8(&block);
        let e_in: f64 = block.iter().flatten().map(|v| v * v).sum();
        let e_out: f64 = coef.iter().flatten().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-10);
    }

    #[test]
    fn quality_100_is_near_identity_on_integer_grids() {
        // Per-block constant gray values with integer 0..255 levels have
        // exactly integer DCT coefficients (DC = 8 * level shift, Cb/Cr
        // identically zero), so all-ones tables round them losslessly.
        let mut img = Tensor::zeros(3, 16, 16);
        let levels = [31u32, 77, 128, 203];
        for (bi, &k) in levels.iter().enumerate() {
            let (by, bx) = ((bi / 2) * 8, (bi % 2) * 8);
            for y in 0..8 {
                for x in 0..8 {
                    for c in 0..3 {
                        *img.at_mut(c, by + y, bx + x) = f64::from(k) / 255.0;
                    }
                }
            }
        }
        let out = diff_jpeg(&img, 100).unwrap();
        assert!(out.sub(&img).linf() <= 1e-4);
    }

    #[test]
    fn smooth_mode_is_identity_on_interior_images() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let img = Tensor::from_vec(
            3,
            16,
            16,
            (0..768).map(|_| rng.gen_range(0.1..0.9)).collect(),
        );
        let (out, _) = diff_jpeg_with_trace(&img, 50, Rounding::Smooth).unwrap();
        assert!(out.sub(&img).linf() <= 1e-10);
    }

    #[test]
    fn ste_changes_but_stays_close_at_high_quality() {
        let img = crate::synth::synth_image_in(3, 16, 16, 0.1, 0.9);
        let out = diff_jpeg(&img, 95).unwrap();
        assert!(out.sub(&img).linf() > 0.0);
        let mean_abs =
            out.sub(&img).data.iter().map(|v| v.abs()).sum::<f64>() / out.len() as f64;
        assert!(mean_abs < 0.02, "mean abs {mean_abs}");
    }

    #[test]
    fn matches_reference_codec_at_quality_50() {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let img = crate::synth::synth_image(seed, 64, 64);
            // Quantize to 8 bits first so both codecs see identical input.
            let img8 = img.map(|v| (v * 255.0).round() / 255.0);
            let ours = diff_jpeg(&img8, 50).unwrap();
            let reference = crate::robustness::real_jpeg_roundtrip(&img8, 50).unwrap();
            let mean_abs = ours
                .sub(&reference)
                .data
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
                / ours.len() as f64;
            assert!(mean_abs <= 0.03, "seed {seed}: mean abs {mean_abs}");
            total += mean_abs;
        }
        assert!(total / 20.0 <= 0.03);
    }

    #[test]
    fn backward_matches_finite_differences_of_smooth_forward() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let img = Tensor::from_vec(
            3,
            16,
            16,
            (0..768).map(|_| rng.gen_range(0.15..0.85)).collect(),
        );
        // Loss: || smooth_jpeg(x) ||^2, gradient via the adjoint chain.
        let (out, trace) = diff_jpeg_with_trace(&img, 50, Rounding::Smooth).unwrap();
        let analytic = diff_jpeg_backward(&trace, &out.scaled(2.0)).unwrap();
        let loss = |x: &Tensor| {
            diff_jpeg_with_trace(x, 50, Rounding::Smooth)
                .unwrap()
                .0
                .norm_sq()
        };
        let h = 1e-3;
        for i in (0..img.len()).step_by(11) {
            let mut xp = img.clone();
            xp.data[i] += h;
            let mut xm = img.clone();
            xm.data[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            let scale = fd.abs().max(analytic.data[i].abs()).max(1e-6);
            assert!(
                (fd - analytic.data[i]).abs() / scale <= 5e-2,
                "at {i}: fd {fd} analytic {}",
                analytic.data[i]
            );
        }
    }

    #[test]
    fn backward_is_exact_adjoint_of_smooth_forward() {
        // <J u, v> == <u, J^T v> with J the (linear apart from clip)
        // smooth pipeline on an interior image.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = Tensor::from_vec(3, 8, 8, (0..192).map(|_| rng.gen_range(0.2..0.8)).collect());
        let u = Tensor::from_vec(3, 8, 8, (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let v = Tensor::from_vec(3, 8, 8, (0..192).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (_, trace) = diff_jpeg_with_trace(&x, 50, Rounding::Smooth).unwrap();
        let eps = 1e-6;
        let (y_plus, _) =
            diff_jpeg_with_trace(&x.add(&u.scaled(eps)), 50, Rounding::Smooth).unwrap();
        let (y_minus, _) =
            diff_jpeg_with_trace(&x.add(&u.scaled(-eps)), 50, Rounding::Smooth).unwrap();
        let ju = y_plus.sub(&y_minus).scaled(1.0 / (2.0 * eps));
        let jtv = diff_jpeg_backward(&trace, &v).unwrap();
        let lhs = ju.dot(&v);
        let rhs = u.dot(&jtv);
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn odd_block_dims_rejected() {
        let img = Tensor::zeros(3, 12, 16);
        assert!(matches!(diff_jpeg(&img, 50), Err(Error::Dimension(_))));
    }
}
