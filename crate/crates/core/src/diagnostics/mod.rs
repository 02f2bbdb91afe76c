//! Validation suite: simulation-based calibration, parameter recovery,
//! pooling factors, posterior predictive checks and leave-one-group-out
//! predictive comparison.

mod ecdf;
mod elpd;
mod plots;
mod pooling;
mod ppc;
mod recovery;
mod report;
mod sbc;

pub use ecdf::{ecdf_diff_band, EcdfBand, DEFAULT_BAND_REPS};
pub use elpd::{elpd_from_log_lik, elpd_logo, elpd_logo_single, ElpdTable, GroupElpd};
pub use plots::{ecdf_svg, elpd_svg, recovery_svg, shrinkage_svg};
pub use pooling::pooling_factor;
pub use ppc::{posterior_predictive, OneStepInterval, PredictiveCheck};
pub use recovery::{recovery_from_replications, recovery_stats, Recovery};
pub use report::{write_elpd_report, write_recovery_report, write_sbc_report};
pub use sbc::{rank_of, sbc_from_replications, sbc_ranks, simulate_and_sample, Replication, SbcResult};

/// Empirical quantile with linear interpolation between order statistics
/// (`sorted` ascending, `p` in [0, 1]).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (divisor n - 1); zero for fewer than two values.
pub(crate) fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Pearson correlation; NaN when either side has zero variance, unless
/// both sides are identical.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x == y && !x.is_empty() {
        return 1.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn correlation_edge_cases() {
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }
}
