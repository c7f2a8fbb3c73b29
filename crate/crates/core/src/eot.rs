//! Expectation-over-transformations pipeline: an ordered chain of
//! independently sampled JPEG compression and Gaussian blur.
//!
//! A `TransformSpec` is a concrete draw. The adversarial loss applies the
//! *same* draw to both the protected image and the target so the latent
//! comparison is between images that went through identical degradation;
//! fresh draws happen once per image per step, not per loss term.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::blur::{gaussian_blur, gaussian_blur_backward};
use crate::jpeg::{diff_jpeg_backward, diff_jpeg_with_trace, JpegTrace, Rounding};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EotConfig {
    /// Inclusive bounds for the continuous quality draw (rounded to int).
    pub jpeg_quality_range: (f64, f64),
    pub blur_sigma_range: (f64, f64),
    /// Independent probability that each stage is applied at all.
    pub apply_prob: f64,
}

impl Default for EotConfig {
    fn default() -> Self {
        Self {
            jpeg_quality_range: (30.0, 95.0),
            blur_sigma_range: (0.1, 1.5),
            apply_prob: 0.5,
        }
    }
}

impl EotConfig {
    pub fn validate(&self) -> Result<()> {
        let (qlo, qhi) = self.jpeg_quality_range;
        if !(qlo >= 1.0 && qhi <= 100.0 && qlo <= qhi) {
            return Err(Error::Config(format!(
                "jpeg quality range must satisfy 1 <= lo <= hi <= 100, got [{qlo}, {qhi}]"
            )));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::Config(format!(
                "blur sigma range must satisfy 0 < lo <= hi, got [{slo}, {shi}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply probability must be in [0, 1], got {}",
                self.apply_prob
            )));
        }
        Ok(())
    }

    /// A config whose draws are always the identity transform.
    pub fn disabled() -> Self {
        Self {
            apply_prob: 0.0,
            ..Self::default()
        }
    }
}

/// One concrete transform draw. `None` stages are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub jpeg_quality: Option<u32>,
    pub blur_sigma: Option<f64>,
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self {
            jpeg_quality: None,
            blur_sigma: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.jpeg_quality.is_none() && self.blur_sigma.is_none()
    }
}

/// Draw a transform. Draw order is fixed (jpeg gate, quality, blur gate,
/// sigma) so a given rng state always yields the same spec.
pub fn sample_transform(cfg: &EotConfig, rng: &mut ChaCha12Rng) -> TransformSpec {
    let jpeg_quality = if rng.gen_bool(cfg.apply_prob) {
        let (lo, hi) = cfg.jpeg_quality_range;
        Some(rng.gen_range(lo..=hi).round() as u32)
    } else {
        None
    };
    let blur_sigma = if rng.gen_bool(cfg.apply_prob) {
        let (lo, hi) = cfg.blur_sigma_range;
        Some(rng.gen_range(lo..=hi))
    } else {
        None
    };
    TransformSpec {
        jpeg_quality,
        blur_sigma,
    }
}

/// Per-application data for the backward pass.
pub struct TransformTrace {
    jpeg: Option<JpegTrace>,
}

/// Apply `spec` (JPEG first, then blur) keeping what backward needs.
pub fn apply_with_trace(spec: &TransformSpec, img: &Tensor) -> Result<(Tensor, TransformTrace)> {
    let mut out;
    let mut trace = TransformTrace { jpeg: None };
    match spec.jpeg_quality {
        Some(q) => {
            let (y, t) = diff_jpeg_with_trace(img, q, Rounding::Ste)?;
            out = y;
            trace.jpeg = Some(t);
        }
        None => out = img.clone(),
    }
    if let Some(sigma) = spec.blur_sigma {
        out = gaussian_blur(&out, sigma)?;
    }
    Ok((out, trace))
}

pub fn apply(spec: &TransformSpec, img: &Tensor) -> Result<Tensor> {
    Ok(apply_with_trace(spec, img)?.0)
}

/// Vector-Jacobian product through the transform chain (blur adjoint first,
/// then JPEG straight-through backward).
pub fn apply_backward(
    spec: &TransformSpec,
    trace: &TransformTrace,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let mut g = match spec.blur_sigma {
        Some(sigma) => gaussian_blur_backward(grad_out, sigma)?,
        None => grad_out.clone(),
    };
    if spec.jpeg_quality.is_some() {
        let trace = trace.jpeg.as_ref().ok_or_else(|| {
            Error::Contract("transform trace missing jpeg stage".to_string())
        })?;
        g = diff_jpeg_backward(trace, &g)?;
    }
    Ok(g)
}
