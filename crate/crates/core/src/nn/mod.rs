//! Small hand-written dense networks with explicit backward passes.
//!
//! Every network stores `f64` weights that are kept representable in `f32`
//! so checkpoints round-trip exactly. Gradients live in a zeroed clone of
//! the network ("grad twin") and are accumulated by `backward`.

mod deepset;
mod lstm;
mod summary;

pub use deepset::{DeepSet, DeepSetConfig, DeepSetTrace, Pooling};
pub use lstm::{Lstm, LstmConfig, LstmSummary, LstmTrace};
pub use summary::{
    global_summarize, local_summarize, GlobalSummarizer, LocalSummarizer, LocalSummaryConfig,
    LocalTrace, SummaryConfig,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// Rounds to the nearest `f32`.
#[inline]
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Uniform access to parameter tensors, in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut k = 0;
        self.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&values[k..k + v.len()]);
            k += v.len();
        });
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, _, v| v.fill(value));
    }

    /// Zeroed copy for gradient accumulation.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, `y = b + x W` with `W` stored input-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    /// Empty for a bias-free layer.
    pub b: Vec<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inp: usize, out: usize, bias: bool, rng: &mut SimRng) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        let w = (0..inp * out)
            .map(|_| round_f32(rng.random_range(-limit..limit)))
            .collect();
        Dense {
            inp,
            out,
            w,
            b: if bias { vec![0.0; out] } else { vec![] },
        }
    }

    pub fn zeros(inp: usize, out: usize, bias: bool) -> Self {
        Dense {
            inp,
            out,
            w: vec![0.0; inp * out],
            b: if bias { vec![0.0; out] } else { vec![] },
        }
    }

    /// Writes `b + x W` into `y`.
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        if self.b.is_empty() {
            y.fill(0.0);
        } else {
            y.copy_from_slice(&self.b);
        }
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.out..(i + 1) * self.out];
            for (yo, &w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and, if requested,
    /// adds the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        if !grad.b.is_empty() {
            for (g, &d) in grad.b.iter_mut().zip(dy) {
                *g += d;
            }
        }
        for (i, &xi) in x.iter().enumerate() {
            let row = &mut grad.w[i * self.out..(i + 1) * self.out];
            for (g, &d) in row.iter_mut().zip(dy) {
                *g += xi * d;
            }
        }
        if let Some(dx) = dx {
            for (i, dxi) in dx.iter_mut().enumerate() {
                let row = &self.w[i * self.out..(i + 1) * self.out];
                *dxi += row.iter().zip(dy).map(|(w, d)| w * d).sum::<f64>();
            }
        }
    }
}

impl Params for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w"), &[self.inp, self.out], &self.w);
        if !self.b.is_empty() {
            f(&join(prefix, "b"), &[self.out], &self.b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        f(&join(prefix, "w"), &[self.inp, self.out], &mut self.w);
        if !self.b.is_empty() {
            f(&join(prefix, "b"), &[self.out], &mut self.b);
        }
    }
}

/// Multilayer perceptron. Hidden layers use `activation`; the output layer
/// does too when `activate_output` is set. With no layers it is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_output: bool,
    /// Inverted dropout after each activated hidden layer, training only.
    pub dropout: f64,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    pub acts: Vec<Vec<f64>>,
    /// Elementwise `d out_k / d pre_k`; empty where it is 1.
    deriv: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input")
    }
}

impl Mlp {
    /// `sizes` lists widths from input to output.
    pub fn new(
        sizes: &[usize],
        activation: Activation,
        activate_output: bool,
        dropout: f64,
        rng: &mut SimRng,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], true, rng))
            .collect();
        Mlp {
            layers,
            activation,
            activate_output,
            dropout,
        }
    }

    pub fn identity() -> Self {
        Mlp {
            layers: vec![],
            activation: Activation::Identity,
            activate_output: false,
            dropout: 0.0,
        }
    }

    pub fn out_dim(&self, inp: usize) -> usize {
        self.layers.last().map_or(inp, |l| l.out)
    }

    fn activated(&self, k: usize) -> bool {
        k + 1 < self.layers.len() || self.activate_output
    }

    /// Forward pass without bookkeeping.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur);
            if self.activated(k) {
                y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cur = y;
        }
        cur
    }

    /// Forward pass keeping what `backward` needs. Dropout is applied only
    /// when an rng is supplied.
    pub fn forward(&self, x: &[f64], mut rng: Option<&mut SimRng>) -> MlpTrace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut deriv = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().unwrap());
            let mut d = Vec::new();
            if self.activated(k) {
                d.reserve(y.len());
                for v in y.iter_mut() {
                    *v = self.activation.apply(*v);
                    d.push(self.activation.derivative_from_output(*v));
                }
                let hidden = k + 1 < self.layers.len();
                if let (true, true, Some(r)) = (hidden, self.dropout > 0.0, rng.as_deref_mut()) {
                    let keep = 1.0 - self.dropout;
                    for (v, dv) in y.iter_mut().zip(d.iter_mut()) {
                        let m = if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                        *v *= m;
                        *dv *= m;
                    }
                }
            }
            acts.push(y);
            deriv.push(d);
        }
        MlpTrace { acts, deriv }
    }

    /// Accumulates gradients into `grad` and returns `d loss / d input`.
    pub fn backward(&self, trace: &MlpTrace, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            if !trace.deriv[k].is_empty() {
                for (d, &a) in delta.iter_mut().zip(&trace.deriv[k]) {
                    *d *= a;
                }
            }
            let mut dx = vec![0.0; self.layers[k].inp];
            self.layers[k].backward(&trace.acts[k], &delta, &mut grad.layers[k], Some(&mut dx));
            delta = dx;
        }
        delta
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &k.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &k.to_string()), f);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Elu, Activation::Relu] {
            let mut rng = seeded(1);
            let mut mlp = Mlp::new(&[3, 5, 4, 2], act, false, 0.0, &mut rng);
            // Nonzero biases keep ReLU units away from the kink at zero.
            for (k, l) in mlp.layers.iter_mut().enumerate() {
                for (o, b) in l.b.iter_mut().enumerate() {
                    *b = 0.1 + 0.05 * (k + o) as f64;
                }
            }
            let x = [0.3, -0.7, 1.1];
            let weights = [0.5, -1.3];
            let loss = |m: &Mlp| -> f64 {
                m.eval(&x).iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
            };
            let trace = mlp.forward(&x, None);
            let mut grad = mlp.zeros_like();
            let dx = mlp.backward(&trace, &weights, &mut grad);
            let err = gradcheck::max_rel_error(&mlp, &grad, loss, 1e-6);
            assert!(err < 1e-4, "{act:?}: {err}");
            // Input gradient.
            for i in 0..3 {
                let mut xp = x;
                xp[i] += 1e-6;
                let mut xm = x;
                xm[i] -= 1e-6;
                let f = |x: &[f64]| mlp.eval(x).iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                let fd = (f(&xp) - f(&xm)) / 2e-6;
                assert!((fd - dx[i]).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn empty_mlp_is_identity() {
        let m = Mlp::identity();
        assert_eq!(m.eval(&[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(m.out_dim(2), 2);
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = seeded(3);
        let m = Mlp::new(&[4, 64, 2], Activation::Relu, false, 0.5, &mut rng);
        let x = [1.0, 0.5, -0.2, 0.3];
        assert_eq!(m.forward(&x, None).output(), m.eval(&x).as_slice());
        let a = m.forward(&x, Some(&mut seeded(9)));
        assert_ne!(a.output(), m.eval(&x).as_slice());
    }

    #[test]
    fn weights_are_f32_representable() {
        let m = Mlp::new(&[3, 8, 2], Activation::Relu, false, 0.0, &mut seeded(2));
        assert!(m.flatten().iter().all(|&v| v == round_f32(v)));
    }
}
