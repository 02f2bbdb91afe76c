//! Single-layer LSTM over an ordered group, followed by a dense head.
//!
//! Gates are computed as `W_x x_t + b + W_h h_{t-1}` and split into
//! input, forget, candidate and output blocks (in that order):
//! `c_t = f * c_{t-1} + i * g`, `h_t = o * tanh(c_t)`. The head reads the
//! final hidden state. With `transitions` on, step `t` reads
//! `[x_t, x_{t-1}, 1]` (`[x_0, 0, 0]` at the first step), so one-step
//! dependencies are visible without carrying the previous row in memory.

use serde::{Deserialize, Serialize};

use super::{join, Activation, Dense, Mlp, MlpTrace, Params};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    /// Hidden widths of the head before the output layer.
    pub head: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    /// Feed each step together with the previous one.
    pub transitions: bool,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 64,
            head: vec![64],
            output: 32,
            activation: Activation::Relu,
            transitions: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub hidden: usize,
    /// `d -> 4h`, with bias.
    pub input: Dense,
    /// `h -> 4h`, no bias.
    pub recurrent: Dense,
}

#[derive(Clone, Debug)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LstmTrace {
    steps: Vec<Step>,
    head: MlpTrace,
}

impl LstmTrace {
    pub fn output(&self) -> &[f64] {
        self.head.output()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut SimRng) -> Self {
        Lstm {
            hidden,
            input: Dense::glorot(input, 4 * hidden, true, rng),
            recurrent: Dense::glorot(hidden, 4 * hidden, false, rng),
        }
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Step {
        let hd = self.hidden;
        let mut gates = self.input.forward(x);
        let rec = self.recurrent.forward(h);
        for (g, r) in gates.iter_mut().zip(&rec) {
            *g += r;
        }
        for k in 0..hd {
            gates[k] = sigmoid(gates[k]);
            gates[hd + k] = sigmoid(gates[hd + k]);
            gates[2 * hd + k] = gates[2 * hd + k].tanh();
            gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
        }
        let tanh_c = (0..hd)
            .map(|k| (gates[hd + k] * c[k] + gates[k] * gates[2 * hd + k]).tanh())
            .collect();
        Step {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gates,
            tanh_c,
        }
    }

    fn run(&self, rows: &[Vec<f64>]) -> (Vec<Step>, Vec<f64>) {
        let hd = self.hidden;
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut steps = Vec::with_capacity(rows.len());
        for x in rows {
            let s = self.step(x, &h, &c);
            for k in 0..hd {
                c[k] = s.gates[hd + k] * s.c_prev[k] + s.gates[k] * s.gates[2 * hd + k];
                h[k] = s.gates[3 * hd + k] * s.tanh_c[k];
            }
            steps.push(s);
        }
        (steps, h)
    }

    /// Backpropagation through time from `dh` at the last step.
    fn backward(&self, steps: &[Step], dh_last: &[f64], grad: &mut Lstm) {
        let hd = self.hidden;
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; hd];
        let mut dpre = vec![0.0; 4 * hd];
        for s in steps.iter().rev() {
            for k in 0..hd {
                let (i, f, g, o) = (
                    s.gates[k],
                    s.gates[hd + k],
                    s.gates[2 * hd + k],
                    s.gates[3 * hd + k],
                );
                let tc = s.tanh_c[k];
                let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
                dpre[k] = dck * g * i * (1.0 - i);
                dpre[hd + k] = dck * s.c_prev[k] * f * (1.0 - f);
                dpre[2 * hd + k] = dck * i * (1.0 - g * g);
                dpre[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
                dc[k] = dck * f;
            }
            self.input.backward(&s.x, &dpre, &mut grad.input, None);
            let mut dh_prev = vec![0.0; hd];
            self.recurrent
                .backward(&s.h_prev, &dpre, &mut grad.recurrent, Some(&mut dh_prev));
            dh = dh_prev;
        }
    }
}

impl Params for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.input.visit(&join(prefix, "input"), f);
        self.recurrent.visit(&join(prefix, "recurrent"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.input.visit_mut(&join(prefix, "input"), f);
        self.recurrent.visit_mut(&join(prefix, "recurrent"), f);
    }
}

/// Order-sensitive group summary: LSTM then dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmSummary {
    pub input_dim: usize,
    pub transitions: bool,
    pub lstm: Lstm,
    pub head: Mlp,
}

impl LstmSummary {
    pub fn new(input: usize, cfg: &LstmConfig, rng: &mut SimRng) -> Result<Self> {
        if cfg.hidden == 0 || cfg.output == 0 || cfg.head.contains(&0) {
            return Err(Error::config("recurrent summary widths must be positive"));
        }
        let step_dim = if cfg.transitions { 2 * input + 1 } else { input };
        let lstm = Lstm::new(step_dim, cfg.hidden, rng);
        let mut sizes = vec![cfg.hidden];
        sizes.extend(&cfg.head);
        sizes.push(cfg.output);
        Ok(LstmSummary {
            input_dim: input,
            transitions: cfg.transitions,
            lstm,
            head: Mlp::new(&sizes, cfg.activation, false, 0.0, rng),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.head.out_dim(self.lstm.hidden)
    }

    fn check(&self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::argument("sequence summary needs at least one step"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != self.input_dim) {
            return Err(Error::config(format!(
                "sequence step has dimension {}, network expects {}",
                r.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn steps(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if !self.transitions {
            return rows.to_vec();
        }
        let d = self.input_dim;
        rows.iter()
            .enumerate()
            .map(|(t, x)| {
                let mut v = Vec::with_capacity(2 * d + 1);
                v.extend_from_slice(x);
                match t.checked_sub(1) {
                    Some(p) => {
                        v.extend_from_slice(&rows[p]);
                        v.push(1.0);
                    }
                    None => v.resize(2 * d + 1, 0.0),
                }
                v
            })
            .collect()
    }

    pub fn eval(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(rows)?;
        let (_, h) = self.lstm.run(&self.steps(rows));
        Ok(self.head.eval(&h))
    }

    pub fn forward(&self, rows: &[Vec<f64>]) -> Result<LstmTrace> {
        self.check(rows)?;
        let (steps, h) = self.lstm.run(&self.steps(rows));
        let head = self.head.forward(&h, None);
        Ok(LstmTrace { steps, head })
    }

    pub fn backward(&self, trace: &LstmTrace, dy: &[f64], grad: &mut LstmSummary) {
        let dh = self.head.backward(&trace.head, dy, &mut grad.head);
        self.lstm.backward(&trace.steps, &dh, &mut grad.lstm);
    }
}

impl Params for LstmSummary {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng::seeded;
    use rand::Rng;

    fn net_with(transitions: bool) -> LstmSummary {
        let cfg = LstmConfig {
            hidden: 4,
            head: vec![5],
            output: 3,
            activation: Activation::Tanh,
            transitions,
        };
        LstmSummary::new(3, &cfg, &mut seeded(6)).unwrap()
    }

    fn net() -> LstmSummary {
        net_with(true)
    }

    fn rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = net();
        let x = rows(6, 1);
        let w = [0.4, -0.9, 1.3];
        let loss = |n: &LstmSummary| n.eval(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let trace = net.forward(&x).unwrap();
        let mut grad = net.zeros_like();
        net.backward(&trace, &w, &mut grad);
        let err = gradcheck::max_rel_error(&net, &grad, loss, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradients_match_without_transitions() {
        let net = net_with(false);
        let x = rows(5, 3);
        let w = [1.1, 0.2, -0.7];
        let loss = |n: &LstmSummary| n.eval(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let trace = net.forward(&x).unwrap();
        let mut grad = net.zeros_like();
        net.backward(&trace, &w, &mut grad);
        let err = gradcheck::max_rel_error(&net, &grad, loss, 1e-6);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn transition_steps_pair_consecutive_rows() {
        let net = net();
        let x = rows(3, 4);
        let steps = net.steps(&x);
        assert_eq!(steps[0], [x[0].clone(), vec![0.0; 4]].concat());
        assert_eq!(steps[2], [x[2].clone(), x[1].clone(), vec![1.0]].concat());
        assert_eq!(net.lstm.input.w.len(), 7 * 16);
    }

    #[test]
    fn order_matters() {
        let net = net();
        let x = rows(8, 2);
        let mut rev = x.clone();
        rev.reverse();
        assert_ne!(net.eval(&x).unwrap(), net.eval(&rev).unwrap());
    }

    #[test]
    fn recurrent_layer_has_no_bias() {
        let mut names = vec![];
        net().visit("", &mut |n, _, _| names.push(n.to_string()));
        assert!(names.contains(&"lstm.recurrent.w".to_string()));
        assert!(!names.contains(&"lstm.recurrent.b".to_string()));
    }
}
