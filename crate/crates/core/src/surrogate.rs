//! Frozen latent encoder defining the adversarial objective.
//!
//! A small deterministic convolutional encoder stands in for a large
//! pretrained image encoder: the protection mechanism only needs a fixed
//! differentiable map into a latent space. Topology: 3x3 convolutions
//! 3 -> 32 -> 64 -> 128 at stride 2 with leaky activations, then a linear
//! 3x3 stride-1 head to 4 latent channels, so `3 x H x W` maps to
//! `4 x H/8 x W/8` (the shape contract external encoder exports must
//! match). Parameters are drawn once from a seeded stream and never
//! updated; only input gradients are ever computed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::nn::{leaky, leaky_backward, param_fingerprint, Conv2d, ParamTensor};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DOWNSAMPLE_FACTOR: usize = 8;
pub const LATENT_CHANNELS: usize = 4;
pub const DEFAULT_SEED: u64 = 42;

const CHANNELS: [usize; 3] = [32, 64, 128];

pub fn parameter_census() -> Vec<(String, Vec<usize>)> {
    let spec: [(&str, usize, usize); 4] = [
        ("conv1", 3, CHANNELS[0]),
        ("conv2", CHANNELS[0], CHANNELS[1]),
        ("conv3", CHANNELS[1], CHANNELS[2]),
        ("head", CHANNELS[2], LATENT_CHANNELS),
    ];
    let mut out = Vec::with_capacity(8);
    for (name, ic, oc) in spec {
        out.push((format!("{name}.weight"), vec![oc, ic, 3, 3]));
        out.push((format!("{name}.bias"), vec![oc]));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SurrogateEncoder {
    layers: Vec<Conv2d>,
    pub seed: u64,
}

/// Intermediates of one `encode` call, kept so the input gradient can be
/// computed without a second forward pass.
pub struct SurrogateTrace {
    input_hw: (usize, usize),
    pre1: Tensor,
    f1: Tensor,
    pre2: Tensor,
    f2: Tensor,
    pre3: Tensor,
    f3: Tensor,
}

impl SurrogateEncoder {
    pub fn new(seed: u64) -> Self {
        let mut layers = vec![
            Conv2d::new(3, CHANNELS[0], 3, 2),
            Conv2d::new(CHANNELS[0], CHANNELS[1], 3, 2),
            Conv2d::new(CHANNELS[1], CHANNELS[2], 3, 2),
            Conv2d::new(CHANNELS[2], LATENT_CHANNELS, 3, 1),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for layer in layers.iter_mut() {
            layer.init_fan_in(&mut rng);
        }
        SurrogateEncoder { layers, seed }
    }

    pub fn default_frozen() -> Self {
        SurrogateEncoder::new(DEFAULT_SEED)
    }

    pub(crate) fn from_layers(layers: Vec<Conv2d>, seed: u64) -> Self {
        SurrogateEncoder { layers, seed }
    }

    pub(crate) fn into_layers(self) -> Vec<Conv2d> {
        self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Conv2d] {
        &mut self.layers
    }

    pub fn named_tensors(&self) -> Vec<(String, &ParamTensor)> {
        ["conv1", "conv2", "conv3", "head"]
            .iter()
            .zip(&self.layers)
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    /// Fingerprint over all parameters; training asserts it is unchanged.
    pub fn fingerprint(&self) -> u64 {
        param_fingerprint(self.layers.iter().flat_map(|l| [&l.weight, &l.bias]))
    }

    pub fn latent_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        (LATENT_CHANNELS, h / DOWNSAMPLE_FACTOR, w / DOWNSAMPLE_FACTOR)
    }

    fn check_input(&self, img: &Tensor) -> Result<()> {
        img.expect_channels(3, "surrogate input")?;
        if img.h % DOWNSAMPLE_FACTOR != 0 || img.w % DOWNSAMPLE_FACTOR != 0 {
            return Err(Error::Dimension(format!(
                "surrogate input dims must be divisible by {DOWNSAMPLE_FACTOR}, got {}x{}",
                img.h, img.w
            )));
        }
        Ok(())
    }

    pub fn encode(&self, img: &Tensor) -> Result<Tensor> {
        Ok(self.encode_with_trace(img)?.0)
    }

    pub fn encode_with_trace(&self, img: &Tensor) -> Result<(Tensor, SurrogateTrace)> {
        self.check_input(img)?;
        let pre1 = self.layers[0].forward(img);
        let f1 = leaky(&pre1);
        let pre2 = self.layers[1].forward(&f1);
        let f2 = leaky(&pre2);
        let pre3 = self.layers[2].forward(&f2);
        let f3 = leaky(&pre3);
        let latent = self.layers[3].forward(&f3);
        Ok((
            latent,
            SurrogateTrace {
                input_hw: (img.h, img.w),
                pre1,
                f1,
                pre2,
                f2,
                pre3,
                f3,
            },
        ))
    }

    /// Vector-Jacobian product w.r.t. the image input, reusing a trace.
    pub fn input_grad_from_trace(
        &self,
        trace: &SurrogateTrace,
        grad_latent: &Tensor,
    ) -> Result<Tensor> {
        let (lc, lh, lw) = self.latent_shape(trace.input_hw.0, trace.input_hw.1);
        grad_latent.expect_shape(lc, lh, lw, "surrogate grad_latent")?;
        let g_f3 = self.layers[3].backward_input(grad_latent, trace.f3.h, trace.f3.w);
        let g_pre3 = leaky_backward(&trace.pre3, &g_f3);
        let g_f2 = self.layers[2].backward_input(&g_pre3, trace.f2.h, trace.f2.w);
        let g_pre2 = leaky_backward(&trace.pre2, &g_f2);
        let g_f1 = self.layers[1].backward_input(&g_pre2, trace.f1.h, trace.f1.w);
        let g_pre1 = leaky_backward(&trace.pre1, &g_f1);
        Ok(self.layers[0].backward_input(&g_pre1, trace.input_hw.0, trace.input_hw.1))
    }

    /// One-call input gradient (forward + backward).
    pub fn encode_input_grad(&self, img: &Tensor, grad_latent: &Tensor) -> Result<Tensor> {
        let (_, trace) = self.encode_with_trace(img)?;
        self.input_grad_from_trace(&trace, grad_latent)
    }
}
