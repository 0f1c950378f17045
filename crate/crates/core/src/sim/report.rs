use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::power::P_QUANTILES;
use super::Effect;
use super::{EstimationReport, PowerReport, PowerTest, SimError};
use crate::svg::{panel, Figure, Line};

fn write(
    dir: &Path,
    name: &str,
    contents: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), SimError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| SimError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

fn estimation_tables(report: &EstimationReport) -> (String, String) {
    let mut summary =
        String::from("sigma,scheme,term,rmse_mean,rmse_sd,coverage_mean,coverage_sd\n");
    for r in &report.rows {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            r.sigma,
            r.scheme.name(),
            r.term,
            r.rmse_mean,
            r.rmse_sd,
            r.coverage_mean,
            r.coverage_sd
        );
    }
    let mut curves = String::from("sigma,scheme,term,x,mean_fit,truth\n");
    for c in &report.curves {
        for ((x, f), t) in c.x.iter().zip(&c.mean_fit).zip(&c.truth) {
            let _ = writeln!(
                curves,
                "{},{},{},{x},{f},{t}",
                c.sigma,
                c.scheme.name(),
                c.term
            );
        }
    }
    (summary, curves)
}

fn estimation_panel(report: &EstimationReport, sigma: f64) -> String {
    let mut terms: Vec<&str> = Vec::new();
    for c in &report.curves {
        if !terms.contains(&c.term.as_str()) {
            terms.push(&c.term);
        }
    }
    let figures: Vec<String> = terms
        .iter()
        .map(|&term| {
            let curves: Vec<_> = report
                .curves
                .iter()
                .filter(|c| c.sigma == sigma && c.term == term)
                .collect();
            let mut lines = Vec::new();
            if let Some(first) = curves.first() {
                lines.push(Line {
                    label: "truth".into(),
                    x: first.x.clone(),
                    y: first.truth.clone(),
                    dashed: true,
                });
            }
            lines.extend(curves.iter().map(|c| Line {
                label: c.scheme.name().into(),
                x: c.x.clone(),
                y: c.mean_fit.clone(),
                dashed: false,
            }));
            Figure {
                title: format!("{term}, sigma = {sigma}"),
                x_label: "x".into(),
                y_label: "mean fit".into(),
                lines,
                ..Figure::default()
            }
            .render()
        })
        .collect();
    panel(&figures, 2)
}

fn power_tables(report: &PowerReport) -> (String, String) {
    let mut summary = String::from("sigma,effect,test,rejection_rate,ks");
    for q in P_QUANTILES {
        let _ = write!(summary, ",p_q{q}");
    }
    summary.push('\n');
    for r in &report.rows {
        let _ = write!(
            summary,
            "{},{},{},{},{}",
            r.sigma,
            r.effect.name(),
            r.test,
            r.rejection_rate,
            r.ks
        );
        for q in &r.quantiles {
            let _ = write!(summary, ",{q}");
        }
        summary.push('\n');
    }
    let mut raw = String::from("sigma,effect,test,replication,p\n");
    for r in &report.rows {
        for (i, p) in r.p_values.iter().enumerate() {
            let _ = writeln!(raw, "{},{},{},{i},{p}", r.sigma, r.effect.name(), r.test);
        }
    }
    (summary, raw)
}

fn power_curve(report: &PowerReport, effect: Effect) -> String {
    let lines = PowerTest::all()
        .into_iter()
        .map(|test| {
            let rows: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.effect == effect && r.test == test)
                .collect();
            Line {
                label: test.to_string(),
                x: rows.iter().map(|r| r.sigma).collect(),
                y: rows.iter().map(|r| r.rejection_rate).collect(),
                dashed: matches!(test, PowerTest::Mega | PowerTest::Single),
            }
        })
        .collect();
    Figure {
        title: format!("Rejection rate ({} effect)", effect.name()),
        x_label: "residual sd".into(),
        y_label: "rejection rate".into(),
        lines,
        reference_y: Some(report.config.alpha),
        ..Figure::default()
    }
    .render()
}

fn null_qq(report: &PowerReport, sigma: f64) -> String {
    let mut lines = Vec::new();
    for test in PowerTest::all() {
        if let Some(r) = report.row(sigma, Effect::Null, test) {
            let mut p = r.p_values.clone();
            p.sort_by(f64::total_cmp);
            let n = p.len() as f64;
            lines.push(Line {
                label: test.to_string(),
                x: (0..p.len()).map(|i| (i as f64 + 0.5) / n).collect(),
                y: p,
                dashed: false,
            });
        }
    }
    lines.push(Line {
        label: "uniform".into(),
        x: vec![0.0, 1.0],
        y: vec![0.0, 1.0],
        dashed: true,
    });
    Figure {
        title: format!("Null p-value quantiles, sigma = {sigma}"),
        x_label: "uniform quantile".into(),
        y_label: "empirical quantile".into(),
        lines,
        ..Figure::default()
    }
    .render()
}

/// Writes CSV tables, a JSON summary and SVG figures into `dir`, creating it
/// if needed. CSVs hold only seed-determined numbers; the run time appears
/// only in `summary.json`. Returns the written paths.
pub fn write_reports(
    dir: impl AsRef<Path>,
    estimation: Option<&EstimationReport>,
    power: Option<&PowerReport>,
) -> Result<Vec<PathBuf>, SimError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| SimError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut summary = serde_json::Map::new();
    if let Some(est) = estimation {
        let (table, curves) = estimation_tables(est);
        write(dir, "estimation_summary.csv", &table, &mut written)?;
        write(dir, "estimation_curves.csv", &curves, &mut written)?;
        for &sigma in &est.config.sigmas {
            write(
                dir,
                &format!("estimation_fits_sigma{sigma}.svg"),
                &estimation_panel(est, sigma),
                &mut written,
            )?;
        }
        summary.insert(
            "estimation".into(),
            json!({
                "config": est.config,
                "rows": est.rows,
                "mega_r2_adj": est.mega_r2_adj,
                "runtime_secs": est.runtime_secs,
            }),
        );
    }
    if let Some(pow) = power {
        let (table, raw) = power_tables(pow);
        write(dir, "power_summary.csv", &table, &mut written)?;
        write(dir, "power_pvalues.csv", &raw, &mut written)?;
        for &effect in &pow.config.effects {
            write(
                dir,
                &format!("power_curve_{}.svg", effect.name()),
                &power_curve(pow, effect),
                &mut written,
            )?;
        }
        if pow.config.effects.contains(&Effect::Null) {
            for &sigma in &pow.config.sigmas {
                write(
                    dir,
                    &format!("power_null_qq_sigma{sigma}.svg"),
                    &null_qq(pow, sigma),
                    &mut written,
                )?;
            }
        }
        let rows: Vec<_> = pow
            .rows
            .iter()
            .map(|r| {
                json!({
                    "sigma": r.sigma,
                    "effect": r.effect,
                    "test": r.test.to_string(),
                    "rejection_rate": r.rejection_rate,
                    "ks": r.ks,
                    "quantiles": r.quantiles,
                })
            })
            .collect();
        summary.insert(
            "power".into(),
            json!({ "config": pow.config, "rows": rows, "runtime_secs": pow.runtime_secs }),
        );
    }
    let text =
        serde_json::to_string_pretty(&serde_json::Value::Object(summary)).expect("serializable");
    write(dir, "summary.json", &(text + "\n"), &mut written)?;
    Ok(written)
}
