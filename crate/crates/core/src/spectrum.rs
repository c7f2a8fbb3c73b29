//! Frequency-domain views of a perturbation: centered FFT log-magnitude
//! and one-level wavelet maps (LL grayscale, per-subband HF energy).

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::tensor::Tensor;
use crate::wavelet::dwt;
use crate::Result;

pub struct SpectrumReport {
    /// `1 x H x W`, `log(1 + |FFT|)` averaged over channels, zero
    /// frequency centered.
    pub fft_log_mag: Tensor,
    /// `1 x H/2 x W/2`, LL subband averaged over channels.
    pub ll_map: Tensor,
    /// `1 x H/2 x W/2` each: per-pixel sum of squares across channels.
    pub hf_lh: Tensor,
    pub hf_hl: Tensor,
    pub hf_hh: Tensor,
}

/// Unnormalized 2D FFT magnitudes of one channel plane.
fn fft_mag(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut grid: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in grid.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    grid.iter().map(|c| c.norm()).collect()
}

pub fn spectrum(delta: &Tensor) -> Result<SpectrumReport> {
    let (c, h, w) = delta.shape();
    let mut mag_sum = vec![0.0f64; h * w];
    for ch in 0..c {
        for (acc, m) in mag_sum.iter_mut().zip(fft_mag(delta.plane(ch), h, w)) {
            *acc += m;
        }
    }
    let mut fft_log_mag = Tensor::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            // fftshift: zero frequency lands at (h/2, w/2).
            let sy = (y + h / 2) % h;
            let sx = (x + w / 2) % w;
            fft_log_mag.data[sy * w + sx] = (mag_sum[y * w + x] / c as f64).ln_1p();
        }
    }

    let bands = dwt(delta)?;
    let (hh, hw) = (h / 2, w / 2);
    let mut ll_map = Tensor::zeros(1, hh, hw);
    let mut hf_lh = Tensor::zeros(1, hh, hw);
    let mut hf_hl = Tensor::zeros(1, hh, hw);
    let mut hf_hh = Tensor::zeros(1, hh, hw);
    for ch in 0..c {
        for y in 0..hh {
            for x in 0..hw {
                *ll_map.at_mut(0, y, x) += bands.ll.at(ch, y, x) / c as f64;
                *hf_lh.at_mut(0, y, x) += bands.lh.at(ch, y, x).powi(2);
                *hf_hl.at_mut(0, y, x) += bands.hl.at(ch, y, x).powi(2);
                *hf_hh.at_mut(0, y, x) += bands.hh.at(ch, y, x).powi(2);
            }
        }
    }
    Ok(SpectrumReport {
        fft_log_mag,
        ll_map,
        hf_lh,
        hf_hl,
        hf_hh,
    })
}

/// Min-max normalization to [0, 1] for rendering, with the bounds kept so
/// reports can record what the pixel values mean. A constant map renders
/// as zeros.
#[derive(Debug, Clone, Serialize)]
pub struct MapBounds {
    pub min: f64,
    pub max: f64,
}

pub fn normalize_map(map: &Tensor) -> (Tensor, MapBounds) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in &map.data {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() || min == max {
        let b = MapBounds {
            min: if min.is_finite() { min } else { 0.0 },
            max: if max.is_finite() { max } else { 0.0 },
        };
        return (Tensor::zeros(map.c, map.h, map.w), b);
    }
    let span = max - min;
    (map.map(|v| (v - min) / span), MapBounds { min, max })
}
