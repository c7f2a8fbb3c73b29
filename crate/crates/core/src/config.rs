//! Training configuration: concrete resolved values, a partial mirror for
//! JSON config files, and the merge precedence defaults < file < flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eot::EotConfig;
use crate::generator::DEFAULT_EPSILON;
use crate::losses::LossWeights;
use crate::optimizer::AdamParams;
use crate::{Error, Result};

/// Fully resolved training configuration. Serialized verbatim into run
/// manifests, so every field must round-trip through JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub image_size: usize,
    pub width_multiplier: f64,
    pub epsilon: f64,
    pub eot: EotConfig,
    pub weights: LossWeights,
    pub mask_weight_w: f64,
    pub hinge_c: f64,
    /// "builtin" for the checkerboard target, otherwise an image path.
    pub target: String,
    pub checkpoint_every: usize,
    pub latent_mean_reduction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
            image_size: 512,
            width_multiplier: 1.0,
            epsilon: DEFAULT_EPSILON,
            eot: EotConfig::default(),
            weights: LossWeights::default(),
            mask_weight_w: 1.0,
            hinge_c: 0.0,
            target: "builtin".to_string(),
            checkpoint_every: 50,
            latent_mean_reduction: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        self.adam().validate()?;
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 16, got {}",
                self.image_size
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "width_multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        self.eot.validate()?;
        self.weights.validate()?;
        if !(self.mask_weight_w >= 0.0 && self.mask_weight_w.is_finite()) {
            return Err(Error::Config(format!(
                "mask_weight_w must be nonnegative, got {}",
                self.mask_weight_w
            )));
        }
        if !(self.hinge_c >= 0.0 && self.hinge_c.is_finite()) {
            return Err(Error::Config(format!(
                "hinge_c must be nonnegative, got {}",
                self.hinge_c
            )));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::Config("checkpoint_every must be >= 1".to_string()));
        }
        if self.target.is_empty() {
            return Err(Error::Config("target must not be empty".to_string()));
        }
        Ok(())
    }
}

/// Partial mirror of `TrainConfig` for JSON config files: every field is
/// optional; unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialTrainConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<usize>,
    pub width_multiplier: Option<f64>,
    pub epsilon: Option<f64>,
    pub eot: Option<PartialEotConfig>,
    pub weights: Option<PartialLossWeights>,
    pub mask_weight_w: Option<f64>,
    pub hinge_c: Option<f64>,
    pub target: Option<String>,
    pub checkpoint_every: Option<usize>,
    pub latent_mean_reduction: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialEotConfig {
    pub jpeg_quality_range: Option<(f64, f64)>,
    pub blur_sigma_range: Option<(f64, f64)>,
    pub apply_prob: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialLossWeights {
    pub lambda_adv: Option<f64>,
    pub lambda_pert: Option<f64>,
}

macro_rules! merge {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })+
    };
}

impl PartialTrainConfig {
    pub fn apply_to(&self, cfg: &mut TrainConfig) {
        merge!(
            cfg,
            self,
            epochs,
            batch_size,
            learning_rate,
            adam_beta1,
            adam_beta2,
            adam_eps,
            seed,
            image_size,
            width_multiplier,
            epsilon,
            mask_weight_w,
            hinge_c,
            target,
            checkpoint_every,
            latent_mean_reduction,
        );
        if let Some(eot) = &self.eot {
            merge!(cfg.eot, eot, jpeg_quality_range, blur_sigma_range, apply_prob);
        }
        if let Some(w) = &self.weights {
            merge!(cfg.weights, w, lambda_adv, lambda_pert);
        }
    }
}

/// Parse a JSON config file into the partial form (merge is the caller's
/// job so flag precedence can sit on top).
pub fn load_partial_config(path: &Path) -> Result<PartialTrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
