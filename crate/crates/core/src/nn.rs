//! Convolution layers with hand-written forward/backward passes.
//!
//! There is no general autodiff tape here: each caller owns its network
//! topology and chains these primitives explicitly, caching whatever the
//! backward pass needs. Parameters live in f64 buffers but are kept
//! exactly f32-representable at all times (initialization casts through
//! f32, the optimizer rounds back to the f32 grid after each step), so
//! checkpoint round trips are bit-exact.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::Tensor;

/// A named parameter buffer with explicit dims (rank 4 for kernels
/// `[oc, ic, kh, kw]`, rank 1 for biases).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        ParamTensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// FNV-1a over the f64 bit patterns; used to assert parameter sets stay
/// frozen across operations that must not touch them.
pub fn param_fingerprint<'a>(params: impl IntoIterator<Item = &'a ParamTensor>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in params {
        for &v in &p.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

/// 2D convolution with zero padding. `pad = (k-1)/2` preserves spatial
/// dims at stride 1 and halves even dims exactly at stride 2.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            weight: ParamTensor::zeros(vec![out_channels, in_channels, kernel, kernel]),
            bias: ParamTensor::zeros(vec![out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        }
    }

    /// Fan-in uniform initialization `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`,
    /// weights drawn in index order, biases zero. Values are rounded to
    /// the f32 grid so parameters serialize bit-exactly.
    pub fn init_fan_in(&mut self, rng: &mut ChaCha12Rng) {
        let fan_in = (self.in_channels * self.kernel * self.kernel) as f64;
        let bound = (1.0 / fan_in).sqrt();
        for v in self.weight.data.iter_mut() {
            *v = (rng.gen_range(-bound..bound) as f32) as f64;
        }
        for v in self.bias.data.iter_mut() {
            *v = 0.0;
        }
    }

    pub fn zero_init(&mut self) {
        self.weight.data.iter_mut().for_each(|v| *v = 0.0);
        self.bias.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    #[inline]
    fn w_at(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weight.data
            [((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_channels, "conv input channel mismatch");
        self.forward_partial(x, 0, true)
    }

    /// Convolution contribution of a channel slice of the full input: `x`
    /// holds channels `[ic_offset, ic_offset + x.c)` of the conceptual
    /// input. Contributions from disjoint slices sum to the full forward
    /// (the bias must be included exactly once).
    pub fn forward_partial(&self, x: &Tensor, ic_offset: usize, with_bias: bool) -> Tensor {
        assert!(ic_offset + x.c <= self.in_channels, "channel slice overflow");
        let (oh, ow) = self.out_size(x.h, x.w);
        let k = self.kernel;
        let mut y = Tensor::zeros(self.out_channels, oh, ow);
        for oc in 0..self.out_channels {
            let yplane_base = oc * oh * ow;
            if with_bias {
                let b = self.bias.data[oc];
                y.data[yplane_base..yplane_base + oh * ow]
                    .iter_mut()
                    .for_each(|v| *v = b);
            }
            for (xc, x_plane) in (0..x.c).map(|c| (c, x.plane(c))) {
                let ic = ic_offset + xc;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w_at(oc, ic, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let row = iy as usize * x.w;
                            let yrow = yplane_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                y.data[yrow + ox] += wv * x_plane[row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Gradient w.r.t. the input given the upstream gradient `gy`.
    pub fn backward_input(&self, gy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
        assert_eq!(gy.c, self.out_channels, "conv grad channel mismatch");
        let k = self.kernel;
        let mut gx = Tensor::zeros(self.in_channels, in_h, in_w);
        for oc in 0..self.out_channels {
            let gy_plane = gy.plane(oc);
            for ic in 0..self.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w_at(oc, ic, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..gy.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let gx_row = (ic * in_h + iy as usize) * in_w;
                            let gy_row = oy * gy.w;
                            for ox in 0..gy.w {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                gx.data[gx_row + ix as usize] += wv * gy_plane[gy_row + ox];
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    /// Accumulates parameter gradients for one (input, upstream-gradient)
    /// pair into `gw`/`gb`.
    pub fn backward_params_into(
        &self,
        x: &Tensor,
        gy: &Tensor,
        gw: &mut ParamTensor,
        gb: &mut ParamTensor,
    ) {
        assert_eq!(x.c, self.in_channels);
        assert_eq!(gy.c, self.out_channels);
        assert_eq!(gw.dims, self.weight.dims);
        assert_eq!(gb.dims, self.bias.dims);
        let k = self.kernel;
        for oc in 0..self.out_channels {
            let gy_plane = gy.plane(oc);
            gb.data[oc] += gy_plane.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let x_plane = x.plane(ic);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for oy in 0..gy.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let row = iy as usize * x.w;
                            let gy_row = oy * gy.w;
                            for ox in 0..gy.w {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                acc += x_plane[row + ix as usize] * gy_plane[gy_row + ox];
                            }
                        }
                        gw.data[((oc * self.in_channels + ic) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }

    pub fn zero_grads(&self) -> (ParamTensor, ParamTensor) {
        (
            ParamTensor::zeros(self.weight.dims.clone()),
            ParamTensor::zeros(self.bias.dims.clone()),
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Leaky rectifier, slope 0.2 on the negative side.
pub fn leaky(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Backward through the leaky rectifier given the forward *input* `pre`.
pub fn leaky_backward(pre: &Tensor, gy: &Tensor) -> Tensor {
    pre.zip(gy, |p, g| if p > 0.0 { g } else { LEAKY_SLOPE * g })
}

/// Nearest-neighbor upsampling by an integer factor (used by the optional
/// surrogate pretraining decoder).
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Tensor {
    let mut y = Tensor::zeros(x.c, x.h * factor, x.w * factor);
    for c in 0..x.c {
        for oy in 0..y.h {
            for ox in 0..y.w {
                *y.at_mut(c, oy, ox) = x.at(c, oy / factor, ox / factor);
            }
        }
    }
    y
}

/// Adjoint of nearest upsampling: sums gradients over each block.
pub fn upsample_nearest_backward(gy: &Tensor, factor: usize) -> Tensor {
    let mut gx = Tensor::zeros(gy.c, gy.h / factor, gy.w / factor);
    for c in 0..gy.c {
        for oy in 0..gy.h {
            for ox in 0..gy.w {
                *gx.at_mut(c, oy / factor, ox / factor) += gy.at(c, oy, ox);
            }
        }
    }
    gx
}
