//! ECDF-difference curves of SBC ranks with Monte-Carlo simultaneous bands.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DEFAULT_BAND_REPS: usize = 10_000;

/// Curves and band on the grid `z_k = k / (L + 1)`, `k = 0..=L+1`. The
/// curve value at `z_k` is the fraction of ranks below `k` minus `z_k`,
/// which is exactly zero in expectation for uniform ranks on `{0..L}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfBand {
    pub grid: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gamma: f64,
    /// Whether each curve lies inside the band everywhere.
    pub inside: Vec<bool>,
}

fn ecdf_diff(ranks: &[usize], l: usize) -> Vec<f64> {
    let n = ranks.len() as f64;
    let mut counts = vec![0usize; l + 1];
    for &r in ranks {
        counts[r] += 1;
    }
    let mut out = Vec::with_capacity(l + 2);
    let mut below = 0usize;
    for k in 0..=l + 1 {
        out.push(below as f64 / n - k as f64 / (l + 1) as f64);
        if k <= l {
            below += counts[k];
        }
    }
    out
}

/// Builds ECDF-difference curves for every parameter and a band of
/// simultaneous level `gamma`. The band is `±c · sqrt(z(1-z)/n)`, with `c`
/// the `gamma` quantile of the maximal standardized deviation over
/// `reps` simulated sets of `n` uniform ranks.
pub fn ecdf_diff_band(
    ranks: &[Vec<usize>],
    num_draws: usize,
    gamma: f64,
    reps: usize,
    seed: u64,
) -> Result<EcdfBand> {
    if ranks.is_empty() || ranks.iter().any(Vec::is_empty) {
        return Err(Error::argument("ECDF band needs non-empty ranks"));
    }
    if !(gamma > 0.0 && gamma < 1.0) || reps == 0 {
        return Err(Error::argument("gamma must lie in (0, 1) and reps must be positive"));
    }
    let n = ranks[0].len();
    if ranks.iter().any(|r| r.len() != n) {
        return Err(Error::argument("every parameter needs the same number of ranks"));
    }
    let l = num_draws;
    if ranks.iter().flatten().any(|&r| r > l) {
        return Err(Error::argument(format!("ranks must lie in 0..={l}")));
    }
    let grid: Vec<f64> = (0..=l + 1).map(|k| k as f64 / (l + 1) as f64).collect();
    let sd: Vec<f64> = grid
        .iter()
        .map(|z| (z * (1.0 - z) / n as f64).sqrt())
        .collect();

    let mut rng = seeded(seed);
    let mut maxima = Vec::with_capacity(reps);
    let mut sim = vec![0usize; n];
    for _ in 0..reps {
        for r in sim.iter_mut() {
            *r = rng.random_range(0..=l);
        }
        let d = ecdf_diff(&sim, l);
        let m = (1..=l).map(|k| d[k].abs() / sd[k]).fold(0.0, f64::max);
        maxima.push(m);
    }
    let c = super::quantile(&super::sorted(&maxima), gamma);
    let upper: Vec<f64> = sd.iter().map(|s| c * s).collect();
    let lower: Vec<f64> = upper.iter().map(|u| -u).collect();

    let curves: Vec<Vec<f64>> = ranks.iter().map(|r| ecdf_diff(r, l)).collect();
    let inside = curves
        .iter()
        .map(|cv| cv.iter().zip(&upper).all(|(v, u)| v.abs() <= u + 1e-12))
        .collect();
    Ok(EcdfBand {
        grid,
        curves,
        lower,
        upper,
        gamma,
        inside,
    })
}
