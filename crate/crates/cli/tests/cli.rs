use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use metagam_core::{predict_term_with, DataTable, PredictOptions, StrippedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

fn metagam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metagam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes `x, g, y` rows with `x` uniform on `[lo, hi)`.
fn write_cohort(path: &Path, n: usize, lo: f64, hi: f64, shift: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut csv = String::from("x,g,y\n");
    for _ in 0..n {
        let x = rng.random_range(lo..hi);
        let g = if rng.random_bool(0.5) { "a" } else { "b" };
        let y = (6.0 * x).sin() + shift + if g == "b" { 0.5 } else { 0.0 } + noise.sample(&mut rng);
        csv.push_str(&format!("{x},{g},{y}\n"));
    }
    fs::write(path, csv).unwrap();
}

/// Fits and strips one cohort, returning the stripped model path.
fn stripped_cohort(dir: &Path, name: &str, lo: f64, hi: f64, shift: f64, seed: u64) -> PathBuf {
    let csv = dir.join(format!("{name}.csv"));
    write_cohort(&csv, 300, lo, hi, shift, seed);
    let model = dir.join(format!("{name}.model.json"));
    let out = metagam(&[
        "fit",
        p(&csv),
        "--formula",
        "y ~ s(x, k=10) + g",
        "--out",
        p(&model),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = metagam(&["strip", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stripped = dir.join(format!("{name}.metagam.json"));
    assert!(stripped.is_file());
    stripped
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|v| v.parse().unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i]).collect()
}

#[test]
fn fit_writes_model_and_summary() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("c.csv");
    write_cohort(&csv, 200, 0.0, 1.0, 0.0, 1);
    let model = dir.path().join("c.model.json");
    let out = metagam(&[
        "fit",
        p(&csv),
        "--formula",
        "y ~ s(x, k=10) + g",
        "--out",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(model.is_file());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("s(x)") && summary.contains("scale"));
}

#[test]
fn missing_column_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("c.csv");
    write_cohort(&csv, 50, 0.0, 1.0, 0.0, 2);
    let out = metagam(&[
        "fit",
        p(&csv),
        "--formula",
        "y ~ s(age)",
        "--out",
        "unused.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("age"), "{}", stderr(&out));
}

#[test]
fn formula_parse_error_exits_2_with_column() {
    let out = metagam(&[
        "fit",
        "missing.csv",
        "--formula",
        "y ~ s(x",
        "--out",
        "unused.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("column"), "{}", stderr(&out));
}

#[test]
fn forced_common_knots_on_partial_range_exit_3() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("young.csv");
    write_cohort(&csv, 300, 0.0, 0.45, 0.0, 3);
    let out = metagam(&[
        "fit",
        p(&csv),
        "--formula",
        "y ~ s(x, k=10, knots=0:1)",
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("rank"), "{}", stderr(&out));
}

#[test]
fn identical_cohorts_pool_to_the_shared_curve() {
    let dir = TempDir::new().unwrap();
    let a = stripped_cohort(dir.path(), "a", 0.0, 1.0, 0.0, 4);
    let b = dir.path().join("b.metagam.json");
    fs::copy(&a, &b).unwrap();
    let out_dir = dir.path().join("out");
    let grid = "x=0:1:0.05";
    let out = metagam(&[
        "meta",
        p(&a),
        p(&b),
        "--grid",
        grid,
        "--term",
        "s(x)",
        "--method",
        "fe",
        "--out-dir",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&out_dir.join("meta_s_x.csv"));
    let pooled = column(&header, &rows, "fit");
    let model = StrippedModel::read_file(&a).unwrap();
    let shared = predict_term_with(
        &model,
        "s(x)",
        &DataTable::parse_grid(grid).unwrap(),
        PredictOptions::with_mean_uncertainty(),
    )
    .unwrap();
    for (u, v) in pooled.iter().zip(&shared.fit) {
        assert!((u - v).abs() < 1e-10, "{u} vs {v}");
    }
    for name in [
        "meta_s_x.svg",
        "dominance_s_x.svg",
        "heterogeneity_s_x.svg",
        "pvalues_s_x.csv",
    ] {
        assert!(out_dir.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn random_effects_bands_are_at_least_as_wide_as_fixed_effect_bands() {
    let dir = TempDir::new().unwrap();
    let models: Vec<PathBuf> = (0..3)
        .map(|i| {
            stripped_cohort(
                dir.path(),
                &format!("c{i}"),
                0.0,
                1.0,
                0.4 * i as f64,
                10 + i as u64,
            )
        })
        .collect();
    let mut bands = Vec::new();
    for method in ["fe", "dl"] {
        let out_dir = dir.path().join(method);
        let mut args = vec!["meta"];
        args.extend(models.iter().map(|m| p(m)));
        args.extend([
            "--grid",
            "x=0:1:0.02",
            "--term",
            "s(x)",
            "--intercept",
            "--method",
            method,
        ]);
        args.extend(["--out-dir", p(&out_dir)]);
        let out = metagam(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        let (header, rows) = read_csv(&out_dir.join("meta_s_x.csv"));
        bands.push((
            column(&header, &rows, "lower"),
            column(&header, &rows, "upper"),
        ));
    }
    let (fe, dl) = (&bands[0], &bands[1]);
    for i in 0..fe.0.len() {
        assert!(dl.1[i] - dl.0[i] >= fe.1[i] - fe.0[i] - 1e-12);
    }
}

#[test]
fn six_cohort_dominance_fractions_sum_to_one() {
    let dir = TempDir::new().unwrap();
    let models: Vec<PathBuf> = (0..6)
        .map(|i| {
            let lo = 0.1 * i as f64;
            stripped_cohort(
                dir.path(),
                &format!("c{i}"),
                lo,
                lo + 0.5,
                0.0,
                20 + i as u64,
            )
        })
        .collect();
    let out_dir = dir.path().join("out");
    let mut args = vec!["meta"];
    args.extend(models.iter().map(|m| p(m)));
    args.extend([
        "--grid",
        "x=0:1:0.01",
        "--term",
        "s(x)",
        "--intercept",
        "--range-restrict",
    ]);
    args.extend(["--out-dir", p(&out_dir)]);
    let out = metagam(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = read_csv(&out_dir.join("meta_s_x.csv"));
    let weights: Vec<usize> = (0..header.len())
        .filter(|&i| header[i].starts_with("weight_"))
        .collect();
    assert_eq!(weights.len(), 6);
    let fit = header.iter().position(|h| h == "fit").unwrap();
    let covered: Vec<&Vec<f64>> = rows.iter().filter(|r| r[fit].is_finite()).collect();
    assert!(covered.len() > 70);
    for row in covered {
        let total: f64 = weights.iter().map(|&i| row[i]).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn schema_violation_exits_4_naming_the_file() {
    let dir = TempDir::new().unwrap();
    let good = stripped_cohort(dir.path(), "good", 0.0, 1.0, 0.0, 30);
    let bad = dir.path().join("bad.metagam.json");
    let mut json: serde_json::Value = serde_json::from_slice(&fs::read(&good).unwrap()).unwrap();
    json["coefficients"][1] = serde_json::Value::String("oops".into());
    fs::write(&bad, serde_json::to_vec(&json).unwrap()).unwrap();
    let out = metagam(&[
        "meta",
        p(&good),
        p(&bad),
        "--grid",
        "x=0:1:0.1",
        "--term",
        "s(x)",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let msg = stderr(&out);
    assert!(
        msg.contains("bad.metagam.json") && msg.contains("/coefficients/1"),
        "{msg}"
    );
}

#[test]
fn full_model_is_not_accepted_by_meta() {
    let dir = TempDir::new().unwrap();
    let good = stripped_cohort(dir.path(), "good", 0.0, 1.0, 0.0, 31);
    let full = dir.path().join("good.model.json");
    let out = metagam(&[
        "meta",
        p(&good),
        p(&full),
        "--grid",
        "x=0:1:0.1",
        "--term",
        "s(x)",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn plot_writes_svg() {
    let dir = TempDir::new().unwrap();
    let a = stripped_cohort(dir.path(), "a", 0.0, 0.7, 0.0, 40);
    let b = stripped_cohort(dir.path(), "b", 0.3, 1.0, 0.0, 41);
    let svg = dir.path().join("fig/cohorts.svg");
    let out = metagam(&[
        "plot",
        p(&a),
        p(&b),
        "--grid",
        "x=0:1:0.01",
        "--term",
        "s(x)",
        "--out",
        p(&svg),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("<polyline"));
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn estimation_smoke_run_is_fast_complete_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "[estimation]\nreplications = 5\n");
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let start = Instant::now();
        let out = metagam(&[
            "simulate",
            p(&config),
            "--seed",
            "11",
            "--out-dir",
            p(&out_dir),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(start.elapsed().as_secs_f64() < 60.0);
        for name in [
            "estimation_summary.csv",
            "estimation_curves.csv",
            "estimation_fits_sigma1.svg",
            "estimation_fits_sigma1.6.svg",
            "summary.json",
        ] {
            assert!(out_dir.join(name).is_file(), "{name} missing");
        }
        csvs.push((
            fs::read(out_dir.join("estimation_summary.csv")).unwrap(),
            fs::read(out_dir.join("estimation_curves.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn null_power_run_is_calibrated() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "[power]\nreplications = 100\neffects = [\"null\"]\n",
    );
    let out_dir = dir.path().join("out");
    let out = metagam(&["simulate", p(&config), "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("power_summary.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let test = header.iter().position(|h| *h == "test").unwrap();
    let rate = header.iter().position(|h| *h == "rejection_rate").unwrap();
    let mut seen = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let r: f64 = f[rate].parse().unwrap();
        let window = if matches!(f[test], "mega" | "single" | "tippett") {
            0.15
        } else {
            0.25
        };
        assert!((0.0..=window).contains(&r), "{}: {r}", f[test]);
        seen += 1;
    }
    assert_eq!(seen, 8);
    assert!(out_dir.join("power_null_qq_sigma3500.svg").is_file());
}

#[test]
fn simulation_fit_failure_exits_5_with_replication() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "[estimation]\nreplications = 2\nn_total = 100\nschemes = [\"equal\"]\nsigmas = [1.0]\n",
    );
    let out = metagam(&["simulate", p(&config), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(5), "{}", stderr(&out));
    assert!(stderr(&out).contains("replication"), "{}", stderr(&out));
}

#[test]
fn bad_config_and_thread_settings_exit_2() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "[estimation]\nreplicates = 5\n");
    let out = metagam(&["simulate", p(&config), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_metagam"))
        .args(["simulate", "missing.toml"])
        .env("METAGAM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "[power]\nreplications = 6\nn_total = 600\n");
    let mut tables = Vec::new();
    for threads in ["1", "2"] {
        let out_dir = dir.path().join(threads);
        let out = Command::new(env!("CARGO_BIN_EXE_metagam"))
            .args(["simulate", p(&config), "--out-dir", p(&out_dir)])
            .env("METAGAM_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        tables.push(fs::read(out_dir.join("power_pvalues.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}
