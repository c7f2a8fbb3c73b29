//! Attacker-preprocessing robustness harness and the latent-shift proxy.
//!
//! The latent-shift ratio `‖E(x̃)−E(m)‖² / ‖E(x)−E(m)‖²` is the quantity
//! the adversarial loss optimizes, reported here as a protection-strength
//! proxy. It is a training-objective diagnostic, not a perceptual or
//! downstream-model metric.
//!
//! The JPEG row uses a real codec round trip (through 8-bit pixels), not
//! the differentiable simulation, so the harness measures what an actual
//! attacker pipeline would do.

use image::codecs::jpeg::JpegEncoder;
use serde::Serialize;

use crate::blur::gaussian_blur;
use crate::surrogate::SurrogateEncoder;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const EVAL_JPEG_QUALITY: u8 = 50;
/// Sigma for the kernel-size-5 blur row; evaluation parameter, CLI
/// overridable.
pub const DEFAULT_EVAL_BLUR_SIGMA: f64 = 1.1;

/// Encode to baseline JPEG bytes at `quality` and decode back, through
/// 8-bit RGB on both sides.
pub fn real_jpeg_roundtrip(img: &Tensor, quality: u8) -> Result<Tensor> {
    let (c, h, w) = img.shape();
    img.expect_channels(3, "jpeg round trip")?;
    if !img.is_image_valued() {
        return Err(Error::Contract(
            "jpeg round trip input must lie in [0, 1]".to_string(),
        ));
    }
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (img.at(0, y, x) * 255.0).round() as u8,
                (img.at(1, y, x) * 255.0).round() as u8,
                (img.at(2, y, x) * 255.0).round() as u8,
            ];
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode_image(&rgb)
        .map_err(|e| Error::Format(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::Format(format!("jpeg decode: {e}")))?
        .to_rgb8();
    let mut out = Tensor::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let px = decoded.get_pixel(x as u32, y as u32);
            for ch in 0..3 {
                *out.at_mut(ch, y, x) = f64::from(px[ch]) / 255.0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preproc {
    None,
    Jpeg50,
    Blur5,
}

impl Preproc {
    pub const ALL: [Preproc; 3] = [Preproc::None, Preproc::Jpeg50, Preproc::Blur5];

    pub fn label(self) -> &'static str {
        match self {
            Preproc::None => "none",
            Preproc::Jpeg50 => "jpeg50",
            Preproc::Blur5 => "blur5",
        }
    }
}

pub fn apply_preproc(img: &Tensor, p: Preproc, blur_sigma: f64) -> Result<Tensor> {
    match p {
        Preproc::None => Ok(img.clone()),
        Preproc::Jpeg50 => real_jpeg_roundtrip(img, EVAL_JPEG_QUALITY),
        Preproc::Blur5 => {
            // Blur output can escape [0,1] only by float dust; clamp so
            // downstream range contracts hold.
            Ok(gaussian_blur(img, blur_sigma)?.clamp01())
        }
    }
}

/// `‖E(x_adv)−E(m)‖² / ‖E(x)−E(m)‖²`; NaN when the denominator is zero
/// (x already coincides with the target in latent space).
pub fn latent_shift(
    enc: &SurrogateEncoder,
    x: &Tensor,
    x_adv: &Tensor,
    target: &Tensor,
) -> Result<f64> {
    let (c, h, w) = x.shape();
    x_adv.expect_shape(c, h, w, "latent shift x_adv")?;
    target.expect_shape(c, h, w, "latent shift target")?;
    let zm = enc.encode(target)?;
    let num = enc.encode(x_adv)?.sub(&zm).norm_sq();
    let den = enc.encode(x)?.sub(&zm).norm_sq();
    if den == 0.0 {
        return Ok(f64::NAN);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessRow {
    pub preproc: String,
    /// Mean over images of the per-image latent-shift ratio under this
    /// preprocessing.
    pub ratio: f64,
    /// Degradation relative to the no-preprocessing row.
    pub delta_vs_none: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("preproc,ratio,delta_vs_none\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.preproc, r.ratio, r.delta_vs_none));
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.preproc == label)
    }
}

/// Latent-shift ratios under each preprocessing for aligned clean /
/// protected corpora. The target is encoded once, unpreprocessed.
pub fn robustness_suite(
    protected: &[Tensor],
    clean: &[Tensor],
    enc: &SurrogateEncoder,
    target: &Tensor,
    blur_sigma: f64,
) -> Result<RobustnessReport> {
    if protected.len() != clean.len() || protected.is_empty() {
        return Err(Error::Input(format!(
            "corpora misaligned: {} protected vs {} clean images",
            protected.len(),
            clean.len()
        )));
    }
    for (i, (p, c)) in protected.iter().zip(clean).enumerate() {
        let (cc, hh, ww) = c.shape();
        p.expect_shape(cc, hh, ww, &format!("protected image {i}"))?;
    }
    let zm = enc.encode(target)?;
    let mut rows = Vec::with_capacity(Preproc::ALL.len());
    let mut none_ratio = 0.0;
    for p in Preproc::ALL {
        let mut sum = 0.0;
        for (x_adv, x) in protected.iter().zip(clean) {
            let num = enc.encode(&apply_preproc(x_adv, p, blur_sigma)?)?
                .sub(&zm)
                .norm_sq();
            let den = enc.encode(&apply_preproc(x, p, blur_sigma)?)?
                .sub(&zm)
                .norm_sq();
            sum += if den == 0.0 { f64::NAN } else { num / den };
        }
        let ratio = sum / protected.len() as f64;
        if p == Preproc::None {
            none_ratio = ratio;
        }
        rows.push(RobustnessRow {
            preproc: p.label().to_string(),
            ratio,
            delta_vs_none: ratio - none_ratio,
        });
    }
    Ok(RobustnessReport { rows })
}
