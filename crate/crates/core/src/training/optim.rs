//! Adam with cosine learning-rate decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::nn::round_f32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

impl Schedule {
    /// Learning rate for 0-based `step` out of `total`.
    pub fn rate(self, lr0: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => lr0,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update. Parameters are rounded to `f32` afterwards.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] = round_f32(params[i] - lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_trace_by_hand() {
        // Step 1 with g = 0.5: m = 0.05, v = 0.00025, mhat = 0.5, vhat = 0.25,
        // update = lr * 0.5 / (0.5 + 1e-8).
        let mut adam = Adam::new(1);
        let mut p = [1.0];
        adam.step(&mut p, &[0.5], 0.1);
        let expect1 = round_f32(1.0 - 0.1 * 0.5 / (0.5 + 1e-8));
        assert_eq!(p[0], expect1);
        // Step 2 with g = -1: m = 0.045 - 0.1 = -0.055, v = 0.00024975 + 0.001.
        adam.step(&mut p, &[-1.0], 0.1);
        let m = 0.9 * 0.05 + 0.1 * -1.0;
        let v = 0.999 * 0.00025 + 0.001 * 1.0;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.998001);
        let expect2 = round_f32(expect1 - 0.1 * mhat / (f64::sqrt(vhat) + 1e-8));
        assert_eq!(p[0], expect2);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(Schedule::Cosine.rate(5e-4, 0, 100), 5e-4);
        assert!((Schedule::Cosine.rate(5e-4, 50, 100) - 2.5e-4).abs() < 1e-18);
        assert!(Schedule::Cosine.rate(5e-4, 100, 100).abs() < 1e-18);
    }

    #[test]
    fn clipping() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut h = [0.3, 0.4];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h, [0.3, 0.4]);
    }
}
