//! Training objectives: transform-matched latent alignment loss and the
//! mask-weighted perturbation hinge, with analytic input gradients.

use serde::{Deserialize, Serialize};

use crate::eot::{apply, apply_backward, apply_with_trace, TransformSpec};
use crate::imagecore::derive_mask;
use crate::surrogate::SurrogateEncoder;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Target image `m`, its derived single-channel mask, and the weighting
/// parameters of the perturbation hinge.
#[derive(Debug, Clone)]
pub struct ProtectionTarget {
    pub image: Tensor,
    /// Single-channel template mask in [0, 1], derived from the target.
    pub mask: Tensor,
    pub weight_w: f64,
    pub threshold_c: f64,
}

impl ProtectionTarget {
    pub fn new(image: Tensor, weight_w: f64, threshold_c: f64) -> Result<Self> {
        image.expect_channels(3, "protection target")?;
        if !image.is_image_valued() {
            return Err(Error::Contract(
                "protection target must lie in [0, 1]".to_string(),
            ));
        }
        if !(weight_w >= 0.0 && weight_w.is_finite()) {
            return Err(Error::Config(format!(
                "mask weight w must be nonnegative, got {weight_w}"
            )));
        }
        if !(threshold_c >= 0.0 && threshold_c.is_finite()) {
            return Err(Error::Config(format!(
                "hinge threshold c must be nonnegative, got {threshold_c}"
            )));
        }
        let mask = derive_mask(&image)?;
        Ok(Self {
            image,
            mask,
            weight_w,
            threshold_c,
        })
    }

    /// Per-pixel weight map `M = 1 + w * mask` (single channel, broadcast
    /// across color channels by the hinge).
    pub fn weight_map(&self) -> Tensor {
        self.mask.map(|m| 1.0 + self.weight_w * m)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_pert: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_pert: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_adv", self.lambda_adv), ("lambda_pert", self.lambda_pert)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.lambda_adv == 0.0 && self.lambda_pert == 0.0 {
            return Err(Error::Config(
                "at least one loss weight must be nonzero".to_string(),
            ));
        }
        Ok(())
    }
}

/// How the squared latent distance is reduced over latent elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentReduction {
    /// `‖·‖₂²` read literally: sum over all latent elements.
    Sum,
    /// Mean over latent elements; makes λ_adv scale-free across sizes.
    Mean,
}

/// Latent alignment loss `‖E(t(x_adv)) − E(t(m))‖₂²` for one transform
/// draw `t`, applied to *both* images, with the gradient w.r.t. `x_adv`
/// pulled back through the encoder and the transform adjoints.
pub fn latent_adv_loss(
    enc: &SurrogateEncoder,
    x_adv: &Tensor,
    target: &Tensor,
    transform: &TransformSpec,
    reduction: LatentReduction,
) -> Result<(f64, Tensor)> {
    let (c, h, w) = x_adv.shape();
    target.expect_shape(c, h, w, "latent loss target")?;
    let (tx, ttrace) = apply_with_trace(transform, x_adv)?;
    let tm = apply(transform, target)?;
    let (zx, etrace) = enc.encode_with_trace(&tx)?;
    let zm = enc.encode(&tm)?;
    let diff = zx.sub(&zm);
    let (loss, grad_scale) = match reduction {
        LatentReduction::Sum => (diff.norm_sq(), 2.0),
        LatentReduction::Mean => {
            let n = diff.len() as f64;
            (diff.norm_sq() / n, 2.0 / n)
        }
    };
    let g_latent = diff.scaled(grad_scale);
    let g_tx = enc.input_grad_from_trace(&etrace, &g_latent)?;
    let g_x = apply_backward(transform, &ttrace, &g_tx)?;
    Ok((loss, g_x))
}

/// Weighted hinge `max(0, ‖M⊙δ‖₂ − c)` over one image, with subgradient 0
/// on the flat region and at the norm's kink.
pub fn pert_hinge_loss(delta: &Tensor, target_cfg: &ProtectionTarget) -> Result<(f64, Tensor)> {
    let (c, h, w) = delta.shape();
    delta.expect_channels(3, "hinge delta")?;
    target_cfg
        .mask
        .expect_shape(1, h, w, "hinge mask vs delta")?;
    let m = target_cfg.weight_map();
    let mut weighted = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                *weighted.at_mut(ch, y, x) = m.at(0, y, x) * delta.at(ch, y, x);
            }
        }
    }
    let norm = weighted.norm();
    if norm <= target_cfg.threshold_c || norm == 0.0 {
        return Ok((0.0f64.max(norm - target_cfg.threshold_c), Tensor::zeros(c, h, w)));
    }
    let mut grad = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                *grad.at_mut(ch, y, x) = m.at(0, y, x) * weighted.at(ch, y, x) / norm;
            }
        }
    }
    Ok((norm - target_cfg.threshold_c, grad))
}

/// Weighted sum of two loss terms whose gradients live in the same
/// variable (the caller is responsible for pulling both back to a common
/// space first).
pub fn total_objective(
    weights: &LossWeights,
    adv: (f64, &Tensor),
    pert: (f64, &Tensor),
) -> Result<(f64, Tensor)> {
    let (la, ga) = adv;
    let (lp, gp) = pert;
    let (c, h, w) = ga.shape();
    gp.expect_shape(c, h, w, "objective gradient terms")?;
    let value = weights.lambda_adv * la + weights.lambda_pert * lp;
    let grad = ga
        .scaled(weights.lambda_adv)
        .add(&gp.scaled(weights.lambda_pert));
    Ok((value, grad))
}
