use metagam_core::strip::FORMAT_VERSION;
use metagam_core::{
    fit_gam, predict_term, strip_rawdata, Column, DataTable, FitOptions, FittedGam, ModelFormula,
    ModelIoError, StrippedModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_model(seed: u64, n: usize) -> FittedGam {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = rng.random_range(-5.0..0.0);
    let hi = lo + rng.random_range(1.0..10.0);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let sex: Vec<&str> = (0..n).map(|i| if i % 3 == 0 { "M" } else { "F" }).collect();
    let e = Normal::new(0.0, 0.5).unwrap();
    let y: Vec<f64> = (0..n)
        .map(|i| (x[i] / (hi - lo) * 4.0).sin() + g[i] * z[i] + e.sample(&mut rng))
        .collect();
    let mut data = DataTable::new()
        .with_numeric("x", x)
        .unwrap()
        .with_numeric("z", z)
        .unwrap()
        .with_numeric("g", g)
        .unwrap()
        .with_numeric("y", y)
        .unwrap();
    data.push("sex", Column::factor(&sex)).unwrap();
    let k = rng.random_range(5..15);
    let formula =
        ModelFormula::parse(&format!("y ~ s(x, k={k}) + s(z, by=g, k=6) + g + sex")).unwrap();
    fit_gam(
        &data,
        &formula,
        &FitOptions::labelled(format!("cohort{seed}")),
    )
    .unwrap()
}

fn random_grid(seed: u64, model: &FittedGam) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (lo, hi) = model.covariate_ranges["x"];
    let m = rng.random_range(5..60);
    let x: Vec<f64> = (0..m)
        .map(|_| rng.random_range(lo - 1.0..hi + 1.0))
        .collect();
    let z: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let g: Vec<f64> = (0..m).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let sex: Vec<&str> = (0..m).map(|i| if i % 2 == 0 { "M" } else { "F" }).collect();
    let mut grid = DataTable::new()
        .with_numeric("x", x)
        .unwrap()
        .with_numeric("z", z)
        .unwrap()
        .with_numeric("g", g)
        .unwrap();
    grid.push("sex", Column::factor(&sex)).unwrap();
    grid
}

#[test]
fn stripped_predictions_match_full_model() {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let model = random_model(seed, 120 + 7 * seed as usize);
        let stripped = strip_rawdata(&model);
        stripped.privacy_audit().unwrap();
        let reread = StrippedModel::from_json(&stripped.to_canonical_json().unwrap()).unwrap();
        let grid = random_grid(seed, &model);
        for term in ["s(x)", "s(z):g", "g", "sex"] {
            for intercept in [false, true] {
                let full = predict_term(&model, term, &grid, intercept).unwrap();
                for other in [&stripped, &reread] {
                    let p = predict_term(other, term, &grid, intercept).unwrap();
                    for i in 0..full.len() {
                        worst = worst
                            .max((p.fit[i] - full.fit[i]).abs())
                            .max((p.se[i] - full.se[i]).abs());
                    }
                    assert_eq!(p.in_range, full.in_range);
                    assert_eq!(p.n, full.n);
                }
            }
        }
    }
    assert!(worst < 1e-12, "max abs difference {worst}");
}

#[test]
fn no_array_has_cohort_length() {
    let model = random_model(99, 800);
    let stripped = strip_rawdata(&model);
    stripped.privacy_audit().unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&stripped.to_canonical_json().unwrap()).unwrap();
    fn arrays(v: &serde_json::Value, out: &mut Vec<usize>) {
        match v {
            serde_json::Value::Array(a) => {
                out.push(a.len());
                a.iter().for_each(|x| arrays(x, out));
            }
            serde_json::Value::Object(m) => m.values().for_each(|x| arrays(x, out)),
            _ => {}
        }
    }
    let mut lengths = Vec::new();
    arrays(&json, &mut lengths);
    assert!(!lengths.is_empty());
    assert!(lengths.iter().all(|&l| l != 800));
    assert_eq!(stripped.n, 800);
}

#[test]
fn audit_flags_leaked_vectors() {
    let model = random_model(3, 200);
    let mut stripped = strip_rawdata(&model);
    stripped
        .covariate_deciles
        .insert("leak".into(), model.residuals.clone());
    match stripped.privacy_audit() {
        Err(ModelIoError::PrivacyViolation { pointers }) => {
            assert_eq!(pointers, vec!["/covariate_deciles/leak".to_string()])
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn knots_deciles_and_ranges_survive_exactly() {
    let model = random_model(5, 300);
    let stripped = strip_rawdata(&model);
    let back = StrippedModel::from_json(&stripped.to_canonical_json().unwrap()).unwrap();
    assert_eq!(back, stripped);
    assert_eq!(back.structure.smooths, model.structure.smooths);
    assert_eq!(back.covariate_deciles, model.covariate_deciles);
    assert_eq!(back.covariate_ranges, model.covariate_ranges);
    assert!(back.covariate_deciles.values().all(|d| d.len() == 9));
}

#[test]
fn canonical_form_is_idempotent() {
    for seed in 0..10 {
        let bytes = strip_rawdata(&random_model(seed, 150))
            .to_canonical_json()
            .unwrap();
        let again = StrippedModel::from_json(&bytes)
            .unwrap()
            .to_canonical_json()
            .unwrap();
        assert_eq!(bytes, again);
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains('\n'));
    }
}

fn document() -> serde_json::Value {
    serde_json::from_slice(
        &strip_rawdata(&random_model(7, 150))
            .to_canonical_json()
            .unwrap(),
    )
    .unwrap()
}

#[test]
fn missing_covariance_is_reported_by_pointer() {
    let mut doc = document();
    doc.as_object_mut().unwrap().remove("covariance");
    match StrippedModel::from_json(doc.to_string().as_bytes()) {
        Err(ModelIoError::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/covariance"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn nested_type_errors_have_pointers() {
    let mut doc = document();
    doc["coefficients"][2] = serde_json::json!("oops");
    match StrippedModel::from_json(doc.to_string().as_bytes()) {
        Err(ModelIoError::SchemaViolation { pointer, .. }) => {
            assert_eq!(pointer, "/coefficients/2")
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut doc = document();
    doc["covariance"].as_array_mut().unwrap().pop();
    match StrippedModel::from_json(doc.to_string().as_bytes()) {
        Err(ModelIoError::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/covariance"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let mut doc = document();
    doc["format_version"] = serde_json::json!(99);
    assert!(matches!(
        StrippedModel::from_json(doc.to_string().as_bytes()),
        Err(ModelIoError::VersionMismatch { found: 99 })
    ));
    assert_eq!(FORMAT_VERSION, 1);
}

#[test]
fn non_finite_values_are_not_written() {
    let mut stripped = strip_rawdata(&random_model(8, 150));
    stripped.coefficients[1] = f64::NAN;
    match stripped.to_canonical_json() {
        Err(ModelIoError::NonFinite { pointer }) => assert_eq!(pointer, "/coefficients/1"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn file_round_trip() {
    let dir = std::env::temp_dir().join(format!("metagam-strip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("a.metagam.json");
    let stripped = strip_rawdata(&random_model(9, 150));
    stripped.write_file(&path).unwrap();
    assert_eq!(StrippedModel::read_file(&path).unwrap(), stripped);
    assert!(matches!(
        StrippedModel::read_file(dir.join("missing.metagam.json")),
        Err(ModelIoError::Io { .. })
    ));
    std::fs::remove_dir_all(dir).unwrap();
}
