//! Frequency-aware U-Net perturbation generator.
//!
//! Input is the channel concatenation `[x; m]` of the image and the
//! protection target. The encoder interleaves strided convolutions with
//! Haar analysis of each stage output: the three high-frequency subbands
//! are cached for the decoder, and the LL subband is low-passed down to a
//! later stage's resolution, projected by a learned 1x1 convolution, and
//! added as a residual. The decoder upsamples by inverse Haar synthesis
//! using the cached high-frequency subbands, fusing same-scale encoder
//! features by concatenation + 3x3 refinement (skip stages) or reducing
//! channels by a 1x1 projection first (proj stages).
//!
//! The raw head output passes through `tanh` and is scaled by the budget:
//! `delta = epsilon * tanh(z)`, so `|delta| <= epsilon` holds for every
//! parameter setting, and `x_adv = clip(x + delta, 0, 1)`.
//!
//! Stage plan at width multiplier 1 (input `6 x H x W`):
//!
//! | stage          | op            | channels | scale | wavelet action        |
//! |----------------|---------------|----------|-------|-----------------------|
//! | enc1           | conv5 s1      | 6 -> 32  | H     | cache HF1, LL1 chain  |
//! | enc2           | conv3 s2      | 32 -> 64 | H/2   | cache HF2, LL2 chain  |
//! | enc3           | conv3 s2      | 64 -> 128| H/4   | + LL1, cache HF3      |
//! | enc4           | conv3 s2      | 128 ->128| H/8   | + LL2, cache HF4      |
//! | bottleneck     | conv3 s2      | 128 ->128| H/16  | + LL3                 |
//! | dec4           | unpool+skip   | 128 ->128| H/8   | inject HF4            |
//! | dec3           | unpool+skip   | 128 ->128| H/4   | inject HF3            |
//! | dec2           | unpool+proj   | 128 -> 64| H/2   | inject HF2            |
//! | dec1           | unpool+proj   | 64 -> 32 | H     | inject HF1            |
//! | out            | conv5 s1+tanh | 32 -> 3  | H     |                       |
//!
//! Every convolution is followed by a leaky rectifier (slope 0.2) except
//! the head; there is no normalization anywhere. The head is
//! zero-initialized so a fresh generator is the identity protection
//! (`delta = 0`).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::nn::{leaky, leaky_backward, Conv2d, ParamTensor};
use crate::tensor::Tensor;
use crate::wavelet::{dwt, dwt_ll, dwt_ll_backward, idwt, idwt_backward, SubbandSet};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 8.0 / 255.0;

/// Channel plan for a width multiplier: the base plan (32, 64, 128)
/// scaled and rounded, never below one channel.
pub fn channel_plan(width_multiplier: f64) -> (usize, usize, usize) {
    let scale = |base: f64| ((base * width_multiplier).round() as usize).max(1);
    (scale(32.0), scale(64.0), scale(128.0))
}

/// Names of the learnable layers in construction (and serialization) order.
pub const LAYER_NAMES: [&str; 15] = [
    "enc1",
    "enc2",
    "enc3",
    "enc3_inj",
    "enc4",
    "enc4_inj",
    "bottleneck",
    "bottleneck_inj",
    "dec4_ref",
    "dec3_ref",
    "dec2_proj",
    "dec2_ref",
    "dec1_proj",
    "dec1_ref",
    "out",
];

/// Expected tensor census (name, dims) for a width multiplier, in
/// serialization order. Tests and the checkpoint loader compare against
/// this table.
pub fn parameter_census(width_multiplier: f64) -> Vec<(String, Vec<usize>)> {
    let (c1, c2, c3) = channel_plan(width_multiplier);
    let spec: [(&str, usize, usize, usize); 15] = [
        ("enc1", 6, c1, 5),
        ("enc2", c1, c2, 3),
        ("enc3", c2, c3, 3),
        ("enc3_inj", c1, c3, 1),
        ("enc4", c3, c3, 3),
        ("enc4_inj", c2, c3, 1),
        ("bottleneck", c3, c3, 3),
        ("bottleneck_inj", c3, c3, 1),
        ("dec4_ref", 2 * c3, c3, 3),
        ("dec3_ref", 2 * c3, c3, 3),
        ("dec2_proj", c3, c2, 1),
        ("dec2_ref", c2, c2, 3),
        ("dec1_proj", c2, c1, 1),
        ("dec1_ref", c1, c1, 3),
        ("out", c1, 3, 5),
    ];
    let mut out = Vec::with_capacity(30);
    for (name, ic, oc, k) in spec {
        out.push((format!("{name}.weight"), vec![oc, ic, k, k]));
        out.push((format!("{name}.bias"), vec![oc]));
    }
    out
}

/// All learnable parameters plus the budget and provenance fields.
#[derive(Debug)]
pub struct Generator {
    pub layers: Vec<Conv2d>,
    pub epsilon: f64,
    pub width_multiplier: f64,
    pub input_size: (usize, usize),
    pub seed: u64,
    /// Bumped by the optimizer after each parameter update; tapes record
    /// the value they were created under so stale tapes are rejected.
    revision: u64,
    passes: AtomicU64,
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Generator {
            layers: self.layers.clone(),
            epsilon: self.epsilon,
            width_multiplier: self.width_multiplier,
            input_size: self.input_size,
            seed: self.seed,
            revision: self.revision,
            passes: AtomicU64::new(self.passes.load(Ordering::Relaxed)),
        }
    }
}

/// Cached intermediate values of one forward pass, consumed by `backward`.
pub struct Tape {
    revision: u64,
    x_in: Tensor,
    pre1: Tensor,
    f1: Tensor,
    ll1_down: Tensor,
    pre2: Tensor,
    f2: Tensor,
    ll2_down: Tensor,
    pre3_main: Tensor,
    pre3_inj: Tensor,
    f3: Tensor,
    ll3_down: Tensor,
    pre4_main: Tensor,
    pre4_inj: Tensor,
    f4: Tensor,
    preb_main: Tensor,
    preb_inj: Tensor,
    cat4: Tensor,
    pre_d4: Tensor,
    cat3: Tensor,
    pre_d3: Tensor,
    d3: Tensor,
    pre_q2: Tensor,
    u2: Tensor,
    pre_d2: Tensor,
    d2: Tensor,
    pre_q1: Tensor,
    u1: Tensor,
    pre_d1: Tensor,
    d1: Tensor,
    delta_hat: Tensor,
    clip_inside: Tensor,
}

impl Tape {
    /// Folds a loss gradient arriving through `x_adv = clip(x + delta)`
    /// into one arriving directly at `delta`. The clip uses a
    /// straight-through subgradient: 1 inside `[0, 1]`, 0 outside.
    pub fn compose_delta_grad(&self, grad_x_adv: &Tensor, grad_delta: &Tensor) -> Tensor {
        grad_delta.add(&grad_x_adv.zip(&self.clip_inside, |g, m| g * m))
    }
}

/// Per-layer parameter gradients, index-aligned with `Generator::layers`.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub per_layer: Vec<(ParamTensor, ParamTensor)>,
}

impl GeneratorGrads {
    pub fn zeros(gen: &Generator) -> Self {
        GeneratorGrads {
            per_layer: gen.layers.iter().map(|l| l.zero_grads()).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GeneratorGrads) {
        for ((w, b), (ow, ob)) in self.per_layer.iter_mut().zip(&other.per_layer) {
            w.data.iter_mut().zip(&ow.data).for_each(|(a, &o)| *a += o);
            b.data.iter_mut().zip(&ob.data).for_each(|(a, &o)| *a += o);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.per_layer.iter_mut() {
            w.data.iter_mut().for_each(|v| *v *= s);
            b.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.per_layer
            .iter()
            .all(|(w, b)| w.all_finite() && b.all_finite())
    }

    /// Flat view in serialization order (w0, b0, w1, b1, ...).
    pub fn flat(&self) -> Vec<&ParamTensor> {
        self.per_layer
            .iter()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

impl Generator {
    /// Builds and initializes a generator. All convolutions use fan-in
    /// uniform initialization from a ChaCha stream seeded with `seed`,
    /// drawn in layer order; the head is zero-initialized so the fresh
    /// network emits `delta = 0`.
    pub fn new(
        width_multiplier: f64,
        epsilon: f64,
        input_size: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        if width_multiplier <= 0.0 {
            return Err(Error::Config(format!(
                "width multiplier must be positive, got {width_multiplier}"
            )));
        }
        let (c1, c2, c3) = channel_plan(width_multiplier);
        let mut layers = vec![
            Conv2d::new(6, c1, 5, 1),
            Conv2d::new(c1, c2, 3, 2),
            Conv2d::new(c2, c3, 3, 2),
            Conv2d::new(c1, c3, 1, 1),
            Conv2d::new(c3, c3, 3, 2),
            Conv2d::new(c2, c3, 1, 1),
            Conv2d::new(c3, c3, 3, 2),
            Conv2d::new(c3, c3, 1, 1),
            Conv2d::new(2 * c3, c3, 3, 1),
            Conv2d::new(2 * c3, c3, 3, 1),
            Conv2d::new(c3, c2, 1, 1),
            Conv2d::new(c2, c2, 3, 1),
            Conv2d::new(c2, c1, 1, 1),
            Conv2d::new(c1, c1, 3, 1),
            Conv2d::new(c1, 3, 5, 1),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for layer in layers[..last].iter_mut() {
            layer.init_fan_in(&mut rng);
        }
        layers[last].zero_init();
        Ok(Generator {
            layers,
            epsilon,
            width_multiplier,
            input_size,
            seed,
            revision: 0,
            passes: AtomicU64::new(0),
        })
    }

    /// Re-draws every layer (including the head) from the fan-in uniform
    /// scheme. Produces the "random generator state" used by bound and
    /// gradient test suites, where a zero head would hide the deeper layers.
    pub fn randomize_all(&mut self, seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for layer in self.layers.iter_mut() {
            layer.init_fan_in(&mut rng);
        }
        self.revision += 1;
    }

    pub fn layer(&self, name: &str) -> &Conv2d {
        let idx = LAYER_NAMES.iter().position(|&n| n == name).expect("layer name");
        &self.layers[idx]
    }

    /// Named tensors in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &ParamTensor)> {
        LAYER_NAMES
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

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Called by the optimizer after mutating parameters.
    pub fn mark_updated(&mut self) {
        self.revision += 1;
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Number of per-image forward evaluations since construction or the
    /// last reset. Both the training and inference paths count.
    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn reset_forward_passes(&self) {
        self.passes.store(0, Ordering::Relaxed);
    }

    fn check_inputs(&self, x: &Tensor, target: &Tensor) -> Result<()> {
        x.expect_channels(3, "generator input")?;
        target.expect_shape(3, x.h, x.w, "generator target")?;
        if x.h % 16 != 0 || x.w % 16 != 0 {
            return Err(Error::Dimension(format!(
                "generator input dims must be divisible by 16, got {}x{}",
                x.h, x.w
            )));
        }
        if !x.is_image_valued() || !target.is_image_valued() {
            return Err(Error::Contract(
                "generator inputs must be image-valued in [0,1]".into(),
            ));
        }
        for (layer, name) in self.layers.iter().zip(LAYER_NAMES) {
            if !layer.weight.all_finite() || !layer.bias.all_finite() {
                return Err(Error::State(format!("non-finite parameters in {name}")));
            }
        }
        Ok(())
    }

    /// Precomputes the target's contribution to the first encoder stage.
    /// The target is constant across a batch, so this half of the conv is
    /// shared by every image processed with it.
    pub fn precompute_target(&self, target: &Tensor) -> Enc1Precomp {
        Enc1Precomp {
            contrib: self.layers[0].forward_partial(target, 3, false),
            target_shape: target.shape(),
        }
    }

    /// Full forward pass retaining the tape needed for `backward`.
    pub fn forward(&self, x: &Tensor, target: &Tensor) -> Result<(Tensor, Tensor, Tape)> {
        self.check_inputs(x, target)?;
        self.passes.fetch_add(1, Ordering::Relaxed);

        let [enc1, enc2, enc3, enc3_inj, enc4, enc4_inj, bott, bott_inj, dec4_ref, dec3_ref, dec2_proj, dec2_ref, dec1_proj, dec1_ref, out] =
            &self.layers[..]
        else {
            unreachable!("fixed layer count");
        };

        let x_in = x.concat_channels(target);
        let pre1 = enc1.forward(&x_in);
        let f1 = leaky(&pre1);
        let s1 = dwt(&f1)?;

        let pre2 = enc2.forward(&f1);
        let f2 = leaky(&pre2);
        let s2 = dwt(&f2)?;

        let ll1_down = dwt_ll(&s1.ll)?;
        let pre3_main = enc3.forward(&f2);
        let pre3_inj = enc3_inj.forward(&ll1_down);
        let f3 = leaky(&pre3_main).add(&leaky(&pre3_inj));
        let s3 = dwt(&f3)?;

        let ll2_down = dwt_ll(&s2.ll)?;
        let pre4_main = enc4.forward(&f3);
        let pre4_inj = enc4_inj.forward(&ll2_down);
        let f4 = leaky(&pre4_main).add(&leaky(&pre4_inj));
        let s4 = dwt(&f4)?;

        let ll3_down = dwt_ll(&s3.ll)?;
        let preb_main = bott.forward(&f4);
        let preb_inj = bott_inj.forward(&ll3_down);
        let b = leaky(&preb_main).add(&leaky(&preb_inj));

        let u4 = idwt(&SubbandSet {
            ll: b,
            lh: s4.lh,
            hl: s4.hl,
            hh: s4.hh,
        })?;
        let cat4 = u4.concat_channels(&f4);
        let pre_d4 = dec4_ref.forward(&cat4);
        let d4 = leaky(&pre_d4);

        let u3 = idwt(&SubbandSet {
            ll: d4,
            lh: s3.lh,
            hl: s3.hl,
            hh: s3.hh,
        })?;
        let cat3 = u3.concat_channels(&f3);
        let pre_d3 = dec3_ref.forward(&cat3);
        let d3 = leaky(&pre_d3);

        let pre_q2 = dec2_proj.forward(&d3);
        let q2 = leaky(&pre_q2);
        let u2 = idwt(&SubbandSet {
            ll: q2,
            lh: s2.lh,
            hl: s2.hl,
            hh: s2.hh,
        })?;
        let pre_d2 = dec2_ref.forward(&u2);
        let d2 = leaky(&pre_d2);

        let pre_q1 = dec1_proj.forward(&d2);
        let q1 = leaky(&pre_q1);
        let u1 = idwt(&SubbandSet {
            ll: q1,
            lh: s1.lh,
            hl: s1.hl,
            hh: s1.hh,
        })?;
        let pre_d1 = dec1_ref.forward(&u1);
        let d1 = leaky(&pre_d1);

        let z = out.forward(&d1);
        let delta_hat = z.map(f64::tanh);
        let delta = delta_hat.scaled(self.epsilon);
        let x_plus = x.add(&delta);
        let clip_inside = x_plus.map(|v| if (0.0..=1.0).contains(&v) { 1.0 } else { 0.0 });
        let x_adv = x_plus.clamp01();

        debug_assert!(delta.linf() <= self.epsilon);

        let tape = Tape {
            revision: self.revision,
            x_in,
            pre1,
            f1,
            ll1_down,
            pre2,
            f2,
            ll2_down,
            pre3_main,
            pre3_inj,
            f3,
            ll3_down,
            pre4_main,
            pre4_inj,
            f4,
            preb_main,
            preb_inj,
            cat4,
            pre_d4,
            cat3,
            pre_d3,
            d3,
            pre_q2,
            u2,
            pre_d2,
            d2,
            pre_q1,
            u1,
            pre_d1,
            d1,
            delta_hat,
            clip_inside,
        };
        Ok((x_adv, delta, tape))
    }

    /// Inference without tape retention. With a precomputed target
    /// contribution the first stage only convolves the image channels.
    pub fn infer_with(
        &self,
        x: &Tensor,
        target: &Tensor,
        pre: Option<&Enc1Precomp>,
    ) -> Result<(Tensor, Tensor)> {
        self.check_inputs(x, target)?;
        if let Some(p) = pre {
            if p.target_shape != target.shape() {
                return Err(Error::Dimension(
                    "precomputed target contribution has wrong shape".into(),
                ));
            }
        }
        self.passes.fetch_add(1, Ordering::Relaxed);

        let [enc1, enc2, enc3, enc3_inj, enc4, enc4_inj, bott, bott_inj, dec4_ref, dec3_ref, dec2_proj, dec2_ref, dec1_proj, dec1_ref, out] =
            &self.layers[..]
        else {
            unreachable!("fixed layer count");
        };

        let pre1 = match pre {
            Some(p) => enc1.forward_partial(x, 0, true).add(&p.contrib),
            None => enc1.forward(&x.concat_channels(target)),
        };
        let f1 = leaky(&pre1);
        let s1 = dwt(&f1)?;
        let f2 = leaky(&enc2.forward(&f1));
        let s2 = dwt(&f2)?;
        let f3 = leaky(&enc3.forward(&f2)).add(&leaky(&enc3_inj.forward(&dwt_ll(&s1.ll)?)));
        let s3 = dwt(&f3)?;
        let f4 = leaky(&enc4.forward(&f3)).add(&leaky(&enc4_inj.forward(&dwt_ll(&s2.ll)?)));
        let s4 = dwt(&f4)?;
        let b = leaky(&bott.forward(&f4)).add(&leaky(&bott_inj.forward(&dwt_ll(&s3.ll)?)));

        let u4 = idwt(&SubbandSet { ll: b, lh: s4.lh, hl: s4.hl, hh: s4.hh })?;
        let d4 = leaky(&dec4_ref.forward(&u4.concat_channels(&f4)));
        let u3 = idwt(&SubbandSet { ll: d4, lh: s3.lh, hl: s3.hl, hh: s3.hh })?;
        let d3 = leaky(&dec3_ref.forward(&u3.concat_channels(&f3)));
        let q2 = leaky(&dec2_proj.forward(&d3));
        let u2 = idwt(&SubbandSet { ll: q2, lh: s2.lh, hl: s2.hl, hh: s2.hh })?;
        let d2 = leaky(&dec2_ref.forward(&u2));
        let q1 = leaky(&dec1_proj.forward(&d2));
        let u1 = idwt(&SubbandSet { ll: q1, lh: s1.lh, hl: s1.hl, hh: s1.hh })?;
        let d1 = leaky(&dec1_ref.forward(&u1));
        let delta = out.forward(&d1).map(f64::tanh).scaled(self.epsilon);
        let x_adv = x.add(&delta).clamp01();
        Ok((x_adv, delta))
    }

    pub fn infer(&self, x: &Tensor, target: &Tensor) -> Result<(Tensor, Tensor)> {
        self.infer_with(x, target, None)
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given the loss
    /// gradient at `delta`. Use `Tape::compose_delta_grad` first when part
    /// of the loss arrives through `x_adv`.
    pub fn backward(&self, tape: &Tape, grad_delta: &Tensor) -> Result<GeneratorGrads> {
        if tape.revision != self.revision {
            return Err(Error::Contract(
                "tape is stale: parameters changed since the forward pass".into(),
            ));
        }
        grad_delta.expect_shape(3, tape.delta_hat.h, tape.delta_hat.w, "grad_delta")?;

        let [enc1, enc2, enc3, enc3_inj, enc4, enc4_inj, bott, bott_inj, dec4_ref, dec3_ref, dec2_proj, dec2_ref, dec1_proj, dec1_ref, out] =
            &self.layers[..]
        else {
            unreachable!("fixed layer count");
        };
        let mut g = GeneratorGrads::zeros(self);

        // delta = epsilon * tanh(z)
        let g_z = grad_delta.zip(&tape.delta_hat, |gd, th| {
            gd * self.epsilon * (1.0 - th * th)
        });

        // Head.
        {
            let (gw, gb) = &mut g.per_layer[14];
            out.backward_params_into(&tape.d1, &g_z, gw, gb);
        }
        let g_d1 = out.backward_input(&g_z, tape.d1.h, tape.d1.w);

        // dec1: ref conv, haar unpool, proj conv.
        let g_pre_d1 = leaky_backward(&tape.pre_d1, &g_d1);
        {
            let (gw, gb) = &mut g.per_layer[13];
            dec1_ref.backward_params_into(&tape.u1, &g_pre_d1, gw, gb);
        }
        let g_u1 = dec1_ref.backward_input(&g_pre_d1, tape.u1.h, tape.u1.w);
        let s_g_u1 = idwt_backward(&g_u1)?;
        let g_q1 = s_g_u1.ll;
        let g_hf1 = (s_g_u1.lh, s_g_u1.hl, s_g_u1.hh);
        let g_pre_q1 = leaky_backward(&tape.pre_q1, &g_q1);
        {
            let (gw, gb) = &mut g.per_layer[12];
            dec1_proj.backward_params_into(&tape.d2, &g_pre_q1, gw, gb);
        }
        let g_d2 = dec1_proj.backward_input(&g_pre_q1, tape.d2.h, tape.d2.w);

        // dec2.
        let g_pre_d2 = leaky_backward(&tape.pre_d2, &g_d2);
        {
            let (gw, gb) = &mut g.per_layer[11];
            dec2_ref.backward_params_into(&tape.u2, &g_pre_d2, gw, gb);
        }
        let g_u2 = dec2_ref.backward_input(&g_pre_d2, tape.u2.h, tape.u2.w);
        let s_g_u2 = idwt_backward(&g_u2)?;
        let g_q2 = s_g_u2.ll;
        let g_hf2 = (s_g_u2.lh, s_g_u2.hl, s_g_u2.hh);
        let g_pre_q2 = leaky_backward(&tape.pre_q2, &g_q2);
        {
            let (gw, gb) = &mut g.per_layer[10];
            dec2_proj.backward_params_into(&tape.d3, &g_pre_q2, gw, gb);
        }
        let g_d3 = dec2_proj.backward_input(&g_pre_q2, tape.d3.h, tape.d3.w);

        // dec3: skip fusion splits into unpool result and encoder feature.
        let g_pre_d3 = leaky_backward(&tape.pre_d3, &g_d3);
        {
            let (gw, gb) = &mut g.per_layer[9];
            dec3_ref.backward_params_into(&tape.cat3, &g_pre_d3, gw, gb);
        }
        let g_cat3 = dec3_ref.backward_input(&g_pre_d3, tape.cat3.h, tape.cat3.w);
        let (g_u3, g_f3_skip) = g_cat3.split_channels(tape.cat3.c / 2);
        let s_g_u3 = idwt_backward(&g_u3)?;
        let g_d4 = s_g_u3.ll;
        let g_hf3 = (s_g_u3.lh, s_g_u3.hl, s_g_u3.hh);

        // dec4.
        let g_pre_d4 = leaky_backward(&tape.pre_d4, &g_d4);
        {
            let (gw, gb) = &mut g.per_layer[8];
            dec4_ref.backward_params_into(&tape.cat4, &g_pre_d4, gw, gb);
        }
        let g_cat4 = dec4_ref.backward_input(&g_pre_d4, tape.cat4.h, tape.cat4.w);
        let (g_u4, g_f4_skip) = g_cat4.split_channels(tape.cat4.c / 2);
        let s_g_u4 = idwt_backward(&g_u4)?;
        let g_b = s_g_u4.ll;
        let g_hf4 = (s_g_u4.lh, s_g_u4.hl, s_g_u4.hh);

        // Bottleneck: main conv plus LL3 injection.
        let g_preb_main = leaky_backward(&tape.preb_main, &g_b);
        {
            let (gw, gb) = &mut g.per_layer[6];
            bott.backward_params_into(&tape.f4, &g_preb_main, gw, gb);
        }
        let g_f4_main = bott.backward_input(&g_preb_main, tape.f4.h, tape.f4.w);
        let g_preb_inj = leaky_backward(&tape.preb_inj, &g_b);
        {
            let (gw, gb) = &mut g.per_layer[7];
            bott_inj.backward_params_into(&tape.ll3_down, &g_preb_inj, gw, gb);
        }
        let g_ll3_down = bott_inj.backward_input(&g_preb_inj, tape.ll3_down.h, tape.ll3_down.w);
        let g_ll3 = dwt_ll_backward(&g_ll3_down)?;

        // f4 accumulates: bottleneck conv input, skip branch, HF4 analysis.
        let zero_ll4 = Tensor::zeros(g_hf4.0.c, g_hf4.0.h, g_hf4.0.w);
        let g_f4_dwt = idwt(&SubbandSet {
            ll: zero_ll4,
            lh: g_hf4.0,
            hl: g_hf4.1,
            hh: g_hf4.2,
        })?;
        let g_f4 = g_f4_main.add(&g_f4_skip).add(&g_f4_dwt);

        // enc4.
        let g_pre4_main = leaky_backward(&tape.pre4_main, &g_f4);
        {
            let (gw, gb) = &mut g.per_layer[4];
            enc4.backward_params_into(&tape.f3, &g_pre4_main, gw, gb);
        }
        let g_f3_conv = enc4.backward_input(&g_pre4_main, tape.f3.h, tape.f3.w);
        let g_pre4_inj = leaky_backward(&tape.pre4_inj, &g_f4);
        {
            let (gw, gb) = &mut g.per_layer[5];
            enc4_inj.backward_params_into(&tape.ll2_down, &g_pre4_inj, gw, gb);
        }
        let g_ll2_down = enc4_inj.backward_input(&g_pre4_inj, tape.ll2_down.h, tape.ll2_down.w);
        let g_ll2 = dwt_ll_backward(&g_ll2_down)?;

        // f3 accumulates: enc4 conv input, skip branch, LL3 chain, HF3 analysis.
        let g_f3_dwt = idwt(&SubbandSet {
            ll: g_ll3,
            lh: g_hf3.0,
            hl: g_hf3.1,
            hh: g_hf3.2,
        })?;
        let g_f3 = g_f3_conv.add(&g_f3_skip).add(&g_f3_dwt);

        // enc3.
        let g_pre3_main = leaky_backward(&tape.pre3_main, &g_f3);
        {
            let (gw, gb) = &mut g.per_layer[2];
            enc3.backward_params_into(&tape.f2, &g_pre3_main, gw, gb);
        }
        let g_f2_conv = enc3.backward_input(&g_pre3_main, tape.f2.h, tape.f2.w);
        let g_pre3_inj = leaky_backward(&tape.pre3_inj, &g_f3);
        {
            let (gw, gb) = &mut g.per_layer[3];
            enc3_inj.backward_params_into(&tape.ll1_down, &g_pre3_inj, gw, gb);
        }
        let g_ll1_down = enc3_inj.backward_input(&g_pre3_inj, tape.ll1_down.h, tape.ll1_down.w);
        let g_ll1 = dwt_ll_backward(&g_ll1_down)?;

        // f2 accumulates: enc3 conv input, LL2 chain, HF2 analysis.
        let g_f2_dwt = idwt(&SubbandSet {
            ll: g_ll2,
            lh: g_hf2.0,
            hl: g_hf2.1,
            hh: g_hf2.2,
        })?;
        let g_f2 = g_f2_conv.add(&g_f2_dwt);

        // enc2.
        let g_pre2 = leaky_backward(&tape.pre2, &g_f2);
        {
            let (gw, gb) = &mut g.per_layer[1];
            enc2.backward_params_into(&tape.f1, &g_pre2, gw, gb);
        }
        let g_f1_conv = enc2.backward_input(&g_pre2, tape.f1.h, tape.f1.w);

        // f1 accumulates: enc2 conv input, LL1 chain, HF1 analysis.
        let g_f1_dwt = idwt(&SubbandSet {
            ll: g_ll1,
            lh: g_hf1.0,
            hl: g_hf1.1,
            hh: g_hf1.2,
        })?;
        let g_f1 = g_f1_conv.add(&g_f1_dwt);

        // enc1.
        let g_pre1 = leaky_backward(&tape.pre1, &g_f1);
        {
            let (gw, gb) = &mut g.per_layer[0];
            enc1.backward_params_into(&tape.x_in, &g_pre1, gw, gb);
        }

        Ok(g)
    }
}

/// Target-half contribution to the first encoder convolution, reusable
/// across a batch that shares one protection target.
pub struct Enc1Precomp {
    contrib: Tensor,
    target_shape: (usize, usize, usize),
}
