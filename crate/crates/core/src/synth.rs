//! Deterministic synthetic test images: smooth blob-and-gradient scenes
//! that compress like photographs (no hard edges, full-range content).
//! Used by unit tests, the acceptance suite, and nothing in the product
//! path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::tensor::Tensor;

/// Smooth 3-channel image with values in `[lo, hi]`, fully determined by
/// the seed.
pub fn synth_image_in(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    assert!(lo < hi && lo >= 0.0 && hi <= 1.0);
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let mut img = Tensor::zeros(3, h, w);
    // Low-frequency plane gradient per channel.
    let mut grads = [[0.0f64; 3]; 3];
    for g in grads.iter_mut() {
        g[0] = rng.gen_range(-0.4..0.4); // d/dx
        g[1] = rng.gen_range(-0.4..0.4); // d/dy
        g[2] = rng.gen_range(0.3..0.7); // base level
    }
    // A handful of soft Gaussian blobs shared across channels with
    // per-channel amplitude, so channels correlate like natural images.
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let r = rng.gen_range(0.12..0.45) * (h.min(w) as f64);
            let amp = [
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
            ];
            (cx, cy, r, amp)
        })
        .collect();
    let (fx, fy) = (
        rng.gen_range(0.5..2.0) * std::f64::consts::TAU / w as f64,
        rng.gen_range(0.5..2.0) * std::f64::consts::TAU / h as f64,
    );
    let wave_amp = rng.gen_range(0.02..0.08);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64 / w as f64, y as f64 / h as f64);
                let mut v = grads[c][2] + grads[c][0] * xf + grads[c][1] * yf;
                for &(cx, cy, r, amp) in &blobs {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    v += amp[c] * (-d2 / (2.0 * r * r)).exp();
                }
                v += wave_amp * (fx * x as f64).sin() * (fy * y as f64).cos();
                let span = hi - lo;
                *img.at_mut(c, y, x) = lo + span * ((v - 0.1) / 0.8).clamp(0.0, 1.0);
            }
        }
    }
    img
}

pub fn synth_image(seed: u64, h: usize, w: usize) -> Tensor {
    synth_image_in(seed, h, w, 0.02, 0.98)
}

pub fn synth_corpus(seed: u64, count: usize, h: usize, w: usize) -> Vec<Tensor> {
    (0..count)
        .map(|i| synth_image(seed.wrapping_add(i as u64), h, w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synth_image(3, 32, 32);
        let b = synth_image(3, 32, 32);
        assert_eq!(a.data, b.data);
        let c = synth_image(4, 32, 32);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn respects_value_range() {
        for seed in 0..8 {
            let img = synth_image_in(seed, 24, 40, 0.2, 0.8);
            for &v in &img.data {
                assert!((0.2..=0.8).contains(&v));
            }
            assert!(img.is_image_valued());
        }
    }

    #[test]
    fn has_spatial_structure() {
        // Not constant, and neighboring pixels are close (smoothness).
        let img = synth_image(5, 64, 64);
        let mut max_jump = 0.0f64;
        let mut span = 0.0f64;
        for c in 0..3 {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for y in 0..64 {
                for x in 0..64 {
                    let v = img.at(c, y, x);
                    min = min.min(v);
                    max = max.max(v);
                    if x > 0 {
                        max_jump = max_jump.max((v - img.at(c, y, x - 1)).abs());
                    }
                }
            }
            span = span.max(max - min);
        }
        assert!(span > 0.1, "span {span}");
        assert!(max_jump < 0.2, "jump {max_jump}");
    }
}
