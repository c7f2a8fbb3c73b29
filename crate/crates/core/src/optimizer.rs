//! Textbook Adam with bias correction over a fixed list of parameter
//! buffers.
//!
//! After every step each parameter is rounded to the nearest f32, which is
//! what checkpoints store; keeping the live parameters on the f32 grid
//! makes save -> load -> save round trips bit-exact. Moment estimates stay
//! in f64.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

pub struct Adam {
    hyper: AdamParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` fixes the buffer layout; `step` must later be called with
    /// buffers in the same order and of the same lengths.
    pub fn new(hyper: AdamParams, sizes: &[usize]) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all buffers. Returns the squared L2 norm of the
    /// applied update (after f32 rounding), for report bookkeeping.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam expects {} buffers, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::Contract(format!(
                    "adam buffer {i} length mismatch: {} vs {}",
                    g.len(),
                    self.m[i].len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient buffer {i} contains a non-finite value"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let mut update_norm_sq = 0.0;
        for i in 0..self.m.len() {
            let p = &mut *params[i];
            let g = grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let before = p[j];
                let raw = before - self.hyper.learning_rate * m_hat / (v_hat.sqrt() + self.hyper.epsilon);
                let after = raw as f32 as f64;
                p[j] = after;
                let d = after - before;
                update_norm_sq += d * d;
            }
        }
        Ok(update_norm_sq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(hyper: AdamParams) -> Adam {
        Adam::new(hyper, &[1]).unwrap()
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // g = 0.5: m_hat = 0.5, v_hat = 0.25,
        // delta = -lr * 0.5 / (0.5 + 1e-8) = -9.9999998e-4.
        let mut p = vec![0.0f64];
        let mut opt = single(AdamParams::default());
        let g = vec![0.5f64];
        opt.step(&mut [&mut p], &[&g]).unwrap();
        let expect = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!(
            (p[0] - expect).abs() < 1e-9,
            "got {} expected {expect}",
            p[0]
        );
        assert_eq!(p[0], p[0] as f32 as f64);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = vec![0.25f64, -1.5, 0.0];
        let start = p.clone();
        let mut opt = Adam::new(AdamParams::default(), &[3]).unwrap();
        let g = vec![0.0f64; 3];
        for _ in 0..10 {
            let n = opt.step(&mut [&mut p], &[&g]).unwrap();
            assert_eq!(n, 0.0);
        }
        assert_eq!(p, start);
    }

    #[test]
    fn identical_gradients_evolve_identically() {
        let mut a = vec![0.1f64];
        let mut b = vec![0.1f64];
        let mut opt = Adam::new(AdamParams::default(), &[1, 1]).unwrap();
        for k in 0..20 {
            let g = vec![(k as f64 * 0.37).sin()];
            opt.step(&mut [&mut a, &mut b], &[&g, &g]).unwrap();
            assert_eq!(a[0], b[0]);
        }
    }

    #[test]
    fn constant_gradient_step_size_approaches_lr() {
        // With constant g, m_hat -> g and v_hat -> g^2, so per-step delta
        // approaches lr (independent of |g|).
        let mut p = vec![0.0f64];
        let mut opt = single(AdamParams::default());
        let g = vec![3.0f64];
        for _ in 0..200 {
            opt.step(&mut [&mut p], &[&g]).unwrap();
        }
        let before = p[0];
        opt.step(&mut [&mut p], &[&g]).unwrap();
        let delta = (p[0] - before).abs();
        assert!((delta - 1e-3).abs() < 1e-5, "step {delta}");
    }

    #[test]
    fn parameters_stay_on_f32_grid() {
        let mut p = vec![0.7f64 as f32 as f64, -0.3f64 as f32 as f64];
        let mut opt = Adam::new(AdamParams::default(), &[2]).unwrap();
        for k in 0..50 {
            let g = vec![(k as f64).cos(), (k as f64 * 1.7).sin()];
            opt.step(&mut [&mut p], &[&g]).unwrap();
            for &v in &p {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_refused_before_any_mutation() {
        let mut p = vec![1.0f64];
        let start = p.clone();
        let mut opt = single(AdamParams::default());
        let g = vec![f64::NAN];
        let err = opt.step(&mut [&mut p], &[&g]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, start);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn buffer_layout_is_enforced() {
        let mut p = vec![0.0f64; 2];
        let mut opt = Adam::new(AdamParams::default(), &[3]).unwrap();
        let g = vec![0.0f64; 2];
        assert!(matches!(
            opt.step(&mut [&mut p], &[&g]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hyper_validation() {
        assert!(AdamParams::default().validate().is_ok());
        assert!(AdamParams {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamParams {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
