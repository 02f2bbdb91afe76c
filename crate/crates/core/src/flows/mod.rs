//! Conditional normalizing flows built from affine coupling layers.
//!
//! Layer `k` splits the coordinates with a fixed order: the identity for
//! `k = 0`, the reverse of the previous order for odd `k`, and a seeded
//! shuffle for even `k >= 2`. The first `floor(D/2)` coordinates of the
//! order condition the rest. The conditioner reads those coordinates
//! followed by the condition vector and emits a raw log-scale and shift
//! per transformed coordinate. The log-scale is soft-clamped,
//! `s = B tanh(s_raw / B)`, and the final conditioner layer starts at zero
//! so a fresh flow is the identity.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Activation, Mlp, MlpTrace, Params};
use crate::rng::{seeded, SimRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub layers: usize,
    /// Hidden widths of each conditioner.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Dropout inside conditioners while training.
    pub dropout: f64,
    /// Bound on the per-coordinate log-scale.
    pub clamp: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            layers: 6,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            dropout: 0.05,
            clamp: 1.9,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden.contains(&0) {
            return Err(Error::config("flow needs at least one layer and positive widths"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.clamp > 0.0) {
            return Err(Error::config("flow dropout must be in [0, 1) and clamp positive"));
        }
        Ok(())
    }
}

/// Result of mapping parameters to the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOutput {
    pub z: Vec<f64>,
    pub log_det: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub cond_idx: Vec<usize>,
    pub trans_idx: Vec<usize>,
    pub net: Mlp,
    pub clamp: f64,
}

#[derive(Clone, Debug)]
struct CouplingTrace {
    z_in: Vec<f64>,
    net: MlpTrace,
    s: Vec<f64>,
}

impl Coupling {
    fn net_input(&self, z: &[f64], cond: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.cond_idx.iter().map(|&i| z[i]).collect();
        x.extend_from_slice(cond);
        x
    }

    fn scale_shift(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.trans_idx.len();
        let s = out[..m]
            .iter()
            .map(|&r| self.clamp * (r / self.clamp).tanh())
            .collect();
        (s, out[m..2 * m].to_vec())
    }

    fn forward(&self, z: &[f64], cond: &[f64], rng: Option<&mut SimRng>) -> (Vec<f64>, f64, CouplingTrace) {
        let trace = self.net.forward(&self.net_input(z, cond), rng);
        let (s, t) = self.scale_shift(trace.output());
        let mut out = z.to_vec();
        let mut log_det = 0.0;
        for (k, &i) in self.trans_idx.iter().enumerate() {
            out[i] = z[i] * s[k].exp() + t[k];
            log_det += s[k];
        }
        (
            out,
            log_det,
            CouplingTrace {
                z_in: z.to_vec(),
                net: trace,
                s,
            },
        )
    }

    fn inverse(&self, z: &[f64], cond: &[f64]) -> Vec<f64> {
        // Conditioning coordinates pass through unchanged.
        let out_net = self.net.eval(&self.net_input(z, cond));
        let (s, t) = self.scale_shift(&out_net);
        let mut x = z.to_vec();
        for (k, &i) in self.trans_idx.iter().enumerate() {
            x[i] = (z[i] - t[k]) * (-s[k]).exp();
        }
        x
    }

    /// Given `dz_out` and the gradient on this layer's log-det, accumulates
    /// weight gradients, adds the condition gradient into `dcond` and
    /// returns `dz_in`.
    fn backward(
        &self,
        tr: &CouplingTrace,
        dz_out: &[f64],
        d_log_det: f64,
        grad: &mut Coupling,
        dcond: &mut [f64],
    ) -> Vec<f64> {
        let m = self.trans_idx.len();
        let mut dz_in = dz_out.to_vec();
        let mut dnet = vec![0.0; 2 * m];
        let raw = tr.net.output();
        for (k, &i) in self.trans_idx.iter().enumerate() {
            let e = tr.s[k].exp();
            dz_in[i] = dz_out[i] * e;
            let ds = dz_out[i] * tr.z_in[i] * e + d_log_det;
            let th = (raw[k] / self.clamp).tanh();
            dnet[k] = ds * (1.0 - th * th);
            dnet[m + k] = dz_out[i];
        }
        let dx = self.net.backward(&tr.net, &dnet, &mut grad.net);
        let c = self.cond_idx.len();
        for (k, &i) in self.cond_idx.iter().enumerate() {
            dz_in[i] += dx[k];
        }
        for (d, v) in dcond.iter_mut().zip(&dx[c..]) {
            *d += v;
        }
        dz_in
    }
}

/// Forward-pass record used for training.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    layers: Vec<CouplingTrace>,
    pub z: Vec<f64>,
    pub log_det: f64,
}

impl FlowTrace {
    /// Negative log density of the traced input.
    pub fn nll(&self) -> f64 {
        0.5 * self.z.iter().map(|v| v * v).sum::<f64>() + 0.5 * self.z.len() as f64 * LN_2PI
            - self.log_det
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFlow {
    pub dim: usize,
    pub cond_dim: usize,
    pub layers: Vec<Coupling>,
}

/// Coordinate order used by layer `k` of a flow over `dim` coordinates.
fn layer_orders(dim: usize, layers: usize) -> Vec<Vec<usize>> {
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(layers);
    for k in 0..layers {
        let order = if k == 0 {
            (0..dim).collect()
        } else if k % 2 == 1 {
            orders[k - 1].iter().rev().copied().collect()
        } else {
            let mut o: Vec<usize> = (0..dim).collect();
            o.shuffle(&mut seeded(0x5eed_0000 + k as u64));
            o
        };
        orders.push(order);
    }
    orders
}

impl ConditionalFlow {
    pub fn new(dim: usize, cond_dim: usize, cfg: &FlowConfig, rng: &mut SimRng) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::config("flow dimension must be positive"));
        }
        let layers = layer_orders(dim, cfg.layers)
            .into_iter()
            .map(|order| {
                let half = dim / 2;
                let cond_idx = order[..half].to_vec();
                let trans_idx = order[half..].to_vec();
                let mut sizes = vec![cond_idx.len() + cond_dim];
                sizes.extend(&cfg.hidden);
                sizes.push(2 * trans_idx.len());
                let mut net = Mlp::new(&sizes, cfg.activation, false, cfg.dropout, rng);
                let last = net.layers.last_mut().expect("conditioner has layers");
                last.w.fill(0.0);
                last.b.fill(0.0);
                Coupling {
                    cond_idx,
                    trans_idx,
                    net,
                    clamp: cfg.clamp,
                }
            })
            .collect();
        Ok(ConditionalFlow {
            dim,
            cond_dim,
            layers,
        })
    }

    fn check(&self, v: &[f64], cond: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim || cond.len() != self.cond_dim {
            return Err(Error::config(format!(
                "flow expects {} + {} inputs, got {} + {}",
                self.dim,
                self.cond_dim,
                v.len(),
                cond.len()
            )));
        }
        if v.iter().chain(cond).any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite {what} passed to flow")));
        }
        Ok(())
    }

    /// Parameters to latent variates with the log-determinant.
    pub fn forward(&self, theta: &[f64], cond: &[f64]) -> Result<FlowOutput> {
        self.check(theta, cond, "parameters")?;
        let mut z = theta.to_vec();
        let mut log_det = 0.0;
        for layer in &self.layers {
            let (next, ld, _) = layer.forward(&z, cond, None);
            z = next;
            log_det += ld;
        }
        Ok(FlowOutput { z, log_det })
    }

    /// Latent variates to parameters.
    pub fn inverse(&self, z: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        self.check(z, cond, "latent")?;
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            x = layer.inverse(&x, cond);
        }
        Ok(x)
    }

    /// `log q(theta | cond)` under a standard normal base.
    pub fn log_density(&self, theta: &[f64], cond: &[f64]) -> Result<f64> {
        let out = self.forward(theta, cond)?;
        Ok(-0.5 * out.z.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim as f64 * LN_2PI
            + out.log_det)
    }

    /// Forward pass for training; dropout is active when `rng` is given.
    pub fn forward_trace(&self, theta: &[f64], cond: &[f64], mut rng: Option<&mut SimRng>) -> FlowTrace {
        let mut z = theta.to_vec();
        let mut log_det = 0.0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, ld, tr) = layer.forward(&z, cond, rng.as_deref_mut());
            z = next;
            log_det += ld;
            layers.push(tr);
        }
        FlowTrace { layers, z, log_det }
    }

    /// Backpropagates `scale * nll` into `grad`. Returns the gradients with
    /// respect to the parameters and the condition.
    pub fn backward_nll(&self, trace: &FlowTrace, scale: f64, grad: &mut ConditionalFlow) -> (Vec<f64>, Vec<f64>) {
        let mut dz: Vec<f64> = trace.z.iter().map(|v| scale * v).collect();
        let mut dcond = vec![0.0; self.cond_dim];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            dz = layer.backward(&trace.layers[k], &dz, -scale, &mut grad.layers[k], &mut dcond);
        }
        (dz, dcond)
    }
}

impl Params for ConditionalFlow {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.net.visit(&join(prefix, &format!("coupling{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.net.visit_mut(&join(prefix, &format!("coupling{k}")), f);
        }
    }
}

pub fn flow_forward(theta: &[f64], condition: &[f64], flow: &ConditionalFlow) -> Result<FlowOutput> {
    flow.forward(theta, condition)
}

pub fn flow_inverse(z: &[f64], condition: &[f64], flow: &ConditionalFlow) -> Result<Vec<f64>> {
    flow.inverse(z, condition)
}

pub fn log_posterior_density(theta: &[f64], condition: &[f64], flow: &ConditionalFlow) -> Result<f64> {
    flow.log_density(theta, condition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cfg(layers: usize) -> FlowConfig {
        FlowConfig {
            layers,
            hidden: vec![8, 8],
            activation: Activation::Tanh,
            dropout: 0.0,
            clamp: 1.9,
        }
    }

    /// Random weights everywhere, including the final conditioner layers.
    fn random_flow(dim: usize, cond: usize, layers: usize, seed: u64) -> ConditionalFlow {
        let mut rng = seeded(seed);
        let mut flow = ConditionalFlow::new(dim, cond, &cfg(layers), &mut rng).unwrap();
        flow.visit_mut("", &mut |_, _, v| {
            for x in v.iter_mut() {
                *x = rng.random_range(-0.6..0.6);
            }
        });
        flow
    }

    fn normals(n: usize, rng: &mut SimRng) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn fresh_flow_is_identity() {
        let flow = ConditionalFlow::new(3, 2, &cfg(4), &mut seeded(1)).unwrap();
        let theta = [0.3, -1.2, 2.5];
        let out = flow.forward(&theta, &[1.0, -4.0]).unwrap();
        assert_eq!(out.z, theta.to_vec());
        assert_eq!(out.log_det, 0.0);
        assert_eq!(flow.inverse(&theta, &[0.0, 0.0]).unwrap(), theta.to_vec());
        let flow2 = ConditionalFlow::new(2, 1, &cfg(2), &mut seeded(1)).unwrap();
        let lq = flow2.log_density(&[0.0, 0.0], &[0.5]).unwrap();
        assert!((lq + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((lq + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn known_affine_layer() {
        let mut flow = ConditionalFlow::new(2, 1, &cfg(1), &mut seeded(1)).unwrap();
        let layer = &mut flow.layers[0];
        assert_eq!((layer.cond_idx.clone(), layer.trans_idx.clone()), (vec![0], vec![1]));
        let last = layer.net.layers.last_mut().unwrap();
        last.b[0] = 1.9 * (2f64.ln() / 1.9).atanh();
        last.b[1] = 1.0;
        let out = flow.forward(&[0.7, 3.0], &[0.0]).unwrap();
        assert!((out.log_det - 2f64.ln()).abs() < 1e-15);
        assert!((out.z[1] - 7.0).abs() < 1e-14);
        let back = flow.inverse(&[0.7, 5.0], &[0.0]).unwrap();
        assert!((back[1] - 2.0).abs() < 1e-14);
        assert_eq!(back[0], 0.7);
    }

    #[test]
    fn round_trip_on_random_flows() {
        let mut rng = seeded(2);
        for dim in 1..=5 {
            let flow = random_flow(dim, 3, 4, dim as u64);
            for _ in 0..200 {
                let theta = normals(dim, &mut rng);
                let c = normals(3, &mut rng);
                let z = flow.forward(&theta, &c).unwrap().z;
                let back = flow.inverse(&z, &c).unwrap();
                let err = theta.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-6, "{dim}: {err}");
            }
        }
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        let flow = random_flow(3, 2, 4, 9);
        let mut rng = seeded(3);
        for _ in 0..10 {
            let theta = normals(3, &mut rng);
            let c = normals(2, &mut rng);
            let h = 1e-5;
            let mut jac = nalgebra::DMatrix::zeros(3, 3);
            for j in 0..3 {
                let mut up = theta.clone();
                up[j] += h;
                let mut dn = theta.clone();
                dn[j] -= h;
                let zu = flow.forward(&up, &c).unwrap().z;
                let zd = flow.forward(&dn, &c).unwrap().z;
                for i in 0..3 {
                    jac[(i, j)] = (zu[i] - zd[i]) / (2.0 * h);
                }
            }
            let numeric = jac.determinant().abs().ln();
            let analytic = flow.forward(&theta, &c).unwrap().log_det;
            assert!((numeric - analytic).abs() <= 1e-5 * analytic.abs().max(1.0), "{numeric} {analytic}");
        }
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        let flow = random_flow(1, 1, 3, 4);
        let h = 1e-3;
        let total: f64 = (-30_000..30_000)
            .map(|k| flow.log_density(&[k as f64 * h], &[0.4]).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-2, "{total}");
    }

    #[test]
    fn two_dimensional_density_integrates_to_one() {
        let flow = random_flow(2, 1, 2, 5);
        let h = 0.04;
        let mut total = 0.0;
        for a in -300..300 {
            for b in -300..300 {
                total += flow.log_density(&[a as f64 * h, b as f64 * h], &[-0.3]).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-2, "{total}");
    }

    #[test]
    fn condition_is_ignored_when_its_weights_are_zero() {
        let mut flow = random_flow(2, 2, 2, 6);
        for layer in &mut flow.layers {
            let first = &mut layer.net.layers[0];
            let c = layer.cond_idx.len();
            for i in c..first.inp {
                first.w[i * first.out..(i + 1) * first.out].fill(0.0);
            }
        }
        let a = flow.log_density(&[0.2, -0.1], &[5.0, 1.0]).unwrap();
        let b = flow.log_density(&[0.2, -0.1], &[-3.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let flow = random_flow(2, 1, 2, 7);
        assert!(matches!(flow.forward(&[f64::NAN, 0.0], &[0.0]), Err(Error::Numeric(_))));
        assert!(matches!(flow.inverse(&[0.0, 0.0], &[f64::INFINITY]), Err(Error::Numeric(_))));
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let flow = random_flow(3, 2, 3, 8);
        let theta = [0.4, -0.3, 1.1];
        let c = [0.2, -0.9];
        let loss = |f: &ConditionalFlow| -f.log_density(&theta, &c).unwrap();
        let trace = flow.forward_trace(&theta, &c, None);
        assert!((trace.nll() - loss(&flow)).abs() < 1e-12);
        let mut grad = flow.zeros_like();
        let (dtheta, dcond) = flow.backward_nll(&trace, 1.0, &mut grad);
        assert!(gradcheck::max_rel_error(&flow, &grad, loss, 1e-6) < 1e-4);
        for i in 0..2 {
            let mut cu = c;
            cu[i] += 1e-6;
            let mut cd = c;
            cd[i] -= 1e-6;
            let fd = (-flow.log_density(&theta, &cu).unwrap() + flow.log_density(&theta, &cd).unwrap()) / 2e-6;
            assert!((fd - dcond[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
        let mut tu = theta;
        tu[2] += 1e-6;
        let mut td = theta;
        td[2] -= 1e-6;
        let fd = (-flow.log_density(&tu, &c).unwrap() + flow.log_density(&td, &c).unwrap()) / 2e-6;
        assert!((fd - dtheta[2]).abs() < 1e-5 * fd.abs().max(1.0));
    }
}
