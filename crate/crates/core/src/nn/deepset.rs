//! Permutation-invariant set encoder: per-element MLP, masked pooling, MLP.

use serde::{Deserialize, Serialize};

use super::{join, Activation, Mlp, MlpTrace, Params};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepSetConfig {
    /// Widths of the per-element encoder layers.
    pub encoder: Vec<usize>,
    /// Hidden widths of the decoder before the output layer.
    pub decoder: Vec<usize>,
    pub output: usize,
    pub pooling: Pooling,
    /// Appends `ln(n)` to the pooled vector.
    pub count_feature: bool,
    pub activation: Activation,
}

impl Default for DeepSetConfig {
    fn default() -> Self {
        DeepSetConfig {
            encoder: vec![64, 64],
            decoder: vec![64],
            output: 32,
            pooling: Pooling::Mean,
            count_feature: true,
            activation: Activation::Relu,
        }
    }
}

impl DeepSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.output == 0 || self.encoder.iter().chain(&self.decoder).any(|&w| w == 0) {
            return Err(Error::config("summary widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSet {
    pub input: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub pooling: Pooling,
    pub count_feature: bool,
}

#[derive(Clone, Debug)]
pub struct DeepSetTrace {
    encoded: Vec<MlpTrace>,
    decoder: MlpTrace,
}

impl DeepSetTrace {
    pub fn output(&self) -> &[f64] {
        self.decoder.output()
    }
}

impl DeepSet {
    pub fn new(input: usize, cfg: &DeepSetConfig, rng: &mut SimRng) -> Result<Self> {
        cfg.validate()?;
        let mut enc = vec![input];
        enc.extend(&cfg.encoder);
        let encoder = Mlp::new(&enc, cfg.activation, true, 0.0, rng);
        let pooled = encoder.out_dim(input) + cfg.count_feature as usize;
        let mut dec = vec![pooled];
        dec.extend(&cfg.decoder);
        dec.push(cfg.output);
        let decoder = Mlp::new(&dec, cfg.activation, false, 0.0, rng);
        Ok(DeepSet {
            input,
            encoder,
            decoder,
            pooling: cfg.pooling,
            count_feature: cfg.count_feature,
        })
    }

    /// Sum pooling with identity encoder and decoder.
    pub fn identity_sum(input: usize) -> Self {
        DeepSet {
            input,
            encoder: Mlp::identity(),
            decoder: Mlp::identity(),
            pooling: Pooling::Sum,
            count_feature: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        let pooled = self.encoder.out_dim(self.input) + self.count_feature as usize;
        self.decoder.out_dim(pooled)
    }

    /// Reduces encoded rows feature by feature in sorted order, so the result
    /// does not depend on row order.
    fn pool(&self, encoded: &[&[f64]]) -> Vec<f64> {
        let n = encoded.len();
        let dim = encoded[0].len();
        let mut column = Vec::with_capacity(n);
        let mut pooled = Vec::with_capacity(dim + 1);
        for k in 0..dim {
            column.clear();
            column.extend(encoded.iter().map(|r| r[k]));
            column.sort_unstable_by(f64::total_cmp);
            let s: f64 = column.iter().sum();
            pooled.push(match self.pooling {
                Pooling::Sum => s,
                Pooling::Mean => s / n as f64,
            });
        }
        if self.count_feature {
            pooled.push((n as f64).ln());
        }
        pooled
    }

    pub fn eval(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(rows)?;
        let encoded: Vec<Vec<f64>> = rows.iter().map(|r| self.encoder.eval(r)).collect();
        let refs: Vec<&[f64]> = encoded.iter().map(Vec::as_slice).collect();
        Ok(self.decoder.eval(&self.pool(&refs)))
    }

    pub fn forward(&self, rows: &[Vec<f64>]) -> Result<DeepSetTrace> {
        self.check(rows)?;
        let encoded: Vec<MlpTrace> = rows.iter().map(|r| self.encoder.forward(r, None)).collect();
        let refs: Vec<&[f64]> = encoded.iter().map(MlpTrace::output).collect();
        let decoder = self.decoder.forward(&self.pool(&refs), None);
        Ok(DeepSetTrace { encoded, decoder })
    }

    /// Accumulates gradients and returns the gradient for every input row.
    pub fn backward(&self, trace: &DeepSetTrace, dy: &[f64], grad: &mut DeepSet) -> Vec<Vec<f64>> {
        let dpooled = self.decoder.backward(&trace.decoder, dy, &mut grad.decoder);
        let n = trace.encoded.len();
        let scale = match self.pooling {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / n as f64,
        };
        let dim = trace.encoded[0].output().len();
        let drow: Vec<f64> = dpooled[..dim].iter().map(|d| d * scale).collect();
        trace
            .encoded
            .iter()
            .map(|t| self.encoder.backward(t, &drow, &mut grad.encoder))
            .collect()
    }

    fn check(&self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::argument("set summary needs at least one element"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != self.input) {
            return Err(Error::config(format!(
                "set element has dimension {}, network expects {}",
                r.len(),
                self.input
            )));
        }
        Ok(())
    }
}

impl Params for DeepSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn small(pooling: Pooling) -> DeepSet {
        let cfg = DeepSetConfig {
            encoder: vec![5, 4],
            decoder: vec![6],
            output: 3,
            pooling,
            count_feature: true,
            activation: Activation::Tanh,
        };
        DeepSet::new(2, &cfg, &mut seeded(4)).unwrap()
    }

    #[test]
    fn identity_sum_stub_adds() {
        let g = DeepSet::identity_sum(2);
        let out = g.eval(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        assert_eq!(out, vec![4.0, 1.0]);
    }

    #[test]
    fn singleton_and_empty_sets() {
        let net = small(Pooling::Mean);
        assert!(net.eval(&[vec![0.1, 0.2]]).unwrap().iter().all(|v| v.is_finite()));
        assert!(matches!(net.eval(&[]), Err(Error::Argument(_))));
        assert!(matches!(net.eval(&[vec![1.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for pooling in [Pooling::Mean, Pooling::Sum] {
            let net = small(pooling);
            let rows = vec![vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.5, 0.9]];
            let w = [0.7, -0.2, 1.1];
            let loss = |n: &DeepSet| n.eval(&rows).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let trace = net.forward(&rows).unwrap();
            let mut grad = net.zeros_like();
            let drows = net.backward(&trace, &w, &mut grad);
            assert!(gradcheck::max_rel_error(&net, &grad, loss, 1e-6) < 1e-4);
            let mut probe = rows.clone();
            probe[1][0] += 1e-6;
            let up: f64 = net.eval(&probe).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
            probe[1][0] -= 2e-6;
            let down: f64 = net.eval(&probe).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!(((up - down) / 2e-6 - drows[1][0]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..12),
            seed in any::<u64>(),
        ) {
            let net = small(Pooling::Mean);
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut seeded(seed));
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let a = net.eval(&rows).unwrap();
            let b = net.eval(&shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
