//! Fidelity metrics on `[0, 1]` images: PSNR and luminance SSIM.

use serde::Serialize;

use crate::imagecore::luminance;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `10 log10(1 / MSE)`; identical inputs give `f64::INFINITY` (rendered as
/// "inf" in reports).
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (c, h, w) = a.shape();
    b.expect_shape(c, h, w, "psnr")?;
    if !a.is_image_valued() || !b.is_image_valued() {
        return Err(Error::Contract("psnr inputs must lie in [0, 1]".to_string()));
    }
    let mse = a.sub(b).norm_sq() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            taps[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Standard single-scale SSIM on Rec.601 luminance: 11x11 Gaussian window
/// (sigma 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1.0, valid windows
/// only (no padding), mean over window positions.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (c, h, w) = a.shape();
    b.expect_shape(c, h, w, "ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    if !a.is_image_valued() || !b.is_image_valued() {
        return Err(Error::Contract("ssim inputs must lie in [0, 1]".to_string()));
    }
    let la = luminance(a)?;
    let lb = luminance(b)?;
    let window = ssim_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - SSIM_WINDOW) {
        for wx in 0..=(w - SSIM_WINDOW) {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let tap = window[ky * SSIM_WINDOW + kx];
                    let va = la.at(0, wy + ky, wx + kx);
                    let vb = lb.at(0, wy + ky, wx + kx);
                    ma += tap * va;
                    mb += tap * vb;
                    saa += tap * va * va;
                    sbb += tap * vb * vb;
                    sab += tap * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub linf: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_linf: f64,
    pub mean_l2: f64,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl FidelityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr,ssim,linf,l2\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.name,
                fmt_db(r.psnr),
                r.ssim,
                r.linf,
                r.l2
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{},{}\n",
            fmt_db(self.mean_psnr),
            self.mean_ssim,
            self.mean_linf,
            self.mean_l2
        ));
        out
    }
}

/// Per-pair fidelity metrics plus corpus means. Infinite PSNR values
/// (identical pairs) are excluded from the PSNR mean unless every pair is
/// identical, in which case the mean is also infinite.
pub fn fidelity_report(pairs: &[(String, &Tensor, &Tensor)]) -> Result<FidelityReport> {
    if pairs.is_empty() {
        return Err(Error::Input("fidelity corpus is empty".to_string()));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, clean, protected) in pairs {
        let diff = protected.sub(clean);
        rows.push(FidelityRow {
            name: name.clone(),
            psnr: psnr(clean, protected)?,
            ssim: ssim(clean, protected)?,
            linf: diff.linf(),
            l2: diff.norm(),
        });
    }
    let finite_psnr: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect();
    let mean_psnr = if finite_psnr.is_empty() {
        f64::INFINITY
    } else {
        finite_psnr.iter().sum::<f64>() / finite_psnr.len() as f64
    };
    let n = rows.len() as f64;
    Ok(FidelityReport {
        mean_psnr,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mean_linf: rows.iter().map(|r| r.linf).sum::<f64>() / n,
        mean_l2: rows.iter().map(|r| r.l2).sum::<f64>() / n,
        rows,
    })
}
