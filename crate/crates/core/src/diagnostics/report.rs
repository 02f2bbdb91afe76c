//! Report files: JSON summaries, per-figure CSV and SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ecdf::EcdfBand;
use super::elpd::ElpdTable;
use super::plots;
use super::recovery::Recovery;
use super::sbc::SbcResult;
use crate::error::Result;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `sbc.json`, `sbc_ecdf.csv` and `sbc_ecdf.svg` into `dir`.
pub fn write_sbc_report(dir: &Path, sbc: &SbcResult, band: &EcdfBand) -> Result<()> {
    fs::create_dir_all(dir)?;
    let params: Vec<_> = sbc
        .names
        .iter()
        .zip(&sbc.ranks)
        .zip(&band.inside)
        .map(|((n, r), inside)| serde_json::json!({ "name": n, "ranks": r, "inside_band": inside }))
        .collect();
    write_json(
        &dir.join("sbc.json"),
        &serde_json::json!({
            "num_sims": sbc.num_sims(),
            "num_draws": sbc.num_draws,
            "gamma": band.gamma,
            "fraction_inside": band.inside.iter().filter(|&&b| b).count() as f64 / band.inside.len().max(1) as f64,
            "parameters": params,
        }),
    )?;
    let mut csv = String::from("param,z,ecdf_diff,lower,upper\n");
    for (name, curve) in sbc.names.iter().zip(&band.curves) {
        for (k, z) in band.grid.iter().enumerate() {
            let _ = writeln!(csv, "{name},{z},{},{},{}", curve[k], band.lower[k], band.upper[k]);
        }
    }
    fs::write(dir.join("sbc_ecdf.csv"), csv)?;
    fs::write(dir.join("sbc_ecdf.svg"), plots::ecdf_svg(band, &sbc.names))?;
    Ok(())
}

/// Writes `recovery.json`, `recovery.csv` and `recovery.svg` into `dir`.
pub fn write_recovery_report(dir: &Path, recoveries: &[Recovery]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let summary: Vec<_> = recoveries
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "rmse": r.rmse,
                "coverage": r.coverage,
                "correlation": r.correlation,
                "cases": r.truths.len(),
            })
        })
        .collect();
    write_json(&dir.join("recovery.json"), &serde_json::json!({ "parameters": summary }))?;
    let mut csv = String::from("param,case,truth,mean,lower,upper\n");
    for r in recoveries {
        for i in 0..r.truths.len() {
            let _ = writeln!(
                csv,
                "{},{i},{},{},{},{}",
                r.name, r.truths[i], r.means[i], r.lower[i], r.upper[i]
            );
        }
    }
    fs::write(dir.join("recovery.csv"), csv)?;
    fs::write(dir.join("recovery.svg"), plots::recovery_svg(recoveries))?;
    Ok(())
}

/// Writes `elpd.json`, `elpd.csv` and `elpd.svg` into `dir`.
pub fn write_elpd_report(dir: &Path, table: &ElpdTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("elpd.json"), &serde_json::to_value(table)?)?;
    let mut csv = String::from("group,elpd_a,mc_se_a,elpd_b,mc_se_b,diff\n");
    for (j, (a, b)) in table.a.iter().zip(&table.b).enumerate() {
        let _ = writeln!(
            csv,
            "{j},{},{},{},{},{}",
            a.elpd,
            a.mc_se,
            b.elpd,
            b.mc_se,
            a.elpd - b.elpd
        );
    }
    fs::write(dir.join("elpd.csv"), csv)?;
    fs::write(dir.join("elpd.svg"), plots::elpd_svg(table))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ecdf_diff_band, elpd_from_log_lik, recovery_stats};

    #[test]
    fn reports_write_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let sbc = SbcResult {
            names: vec!["mu".into()],
            ranks: vec![vec![0, 3, 5, 9, 10]],
            num_draws: 10,
        };
        let band = ecdf_diff_band(&sbc.ranks, 10, 0.99, 200, 0).unwrap();
        write_sbc_report(dir.path(), &sbc, &band).unwrap();
        let r = recovery_stats("mu", &[0.0], &[vec![0.0, 1.0]], 0.95).unwrap();
        write_recovery_report(dir.path(), &[r]).unwrap();
        let t = ElpdTable {
            model_a: "a".into(),
            model_b: "b".into(),
            a: vec![elpd_from_log_lik(&[-1.0])],
            b: vec![elpd_from_log_lik(&[-2.0])],
            elpd_diff: 1.0,
            se_diff: 0.0,
        };
        write_elpd_report(dir.path(), &t).unwrap();
        for f in ["sbc.json", "sbc_ecdf.csv", "sbc_ecdf.svg", "recovery.json", "recovery.csv", "recovery.svg", "elpd.json", "elpd.csv", "elpd.svg"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = std::fs::read_to_string(dir.path().join("sbc_ecdf.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 12);
    }
}
