//! Raw-data-free model summaries and their canonical JSON form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fit::{FittedGam, ModelStructure, PredictiveModel};
use crate::formula::ModelFormula;

pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "metagam.json";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("schema violation at {pointer}: {message}")]
    SchemaViolation { pointer: String, message: String },
    #[error("unsupported format_version {found} (this build reads {FORMAT_VERSION})")]
    VersionMismatch { found: i64 },
    #[error("non-finite number at {pointer}")]
    NonFinite { pointer: String },
    #[error("arrays at {pointers:?} have the length of the cohort's observations or subjects")]
    PrivacyViolation { pointers: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a cohort shares: coefficients, their covariance, basis
/// definitions and covariate summaries. Random-effect predictions, fitted
/// values, residuals and the model frame are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrippedModel {
    pub format_version: u32,
    pub cohort_label: String,
    pub formula: ModelFormula,
    pub structure: ModelStructure,
    /// Fixed-effect coefficients.
    pub coefficients: Vec<f64>,
    #[serde(with = "crate::linalg::rows")]
    pub covariance: DMatrix<f64>,
    pub scale: f64,
    pub lambdas: BTreeMap<String, f64>,
    pub edf: BTreeMap<String, f64>,
    pub n: usize,
    pub n_subjects: Option<usize>,
    pub term_pvalues: BTreeMap<String, f64>,
    pub covariate_ranges: BTreeMap<String, (f64, f64)>,
    pub covariate_deciles: BTreeMap<String, Vec<f64>>,
}

pub fn strip_rawdata(model: &FittedGam) -> StrippedModel {
    let p = model.n_fixed();
    StrippedModel {
        format_version: FORMAT_VERSION,
        cohort_label: model.label.clone(),
        formula: model.formula.clone(),
        structure: model.structure.clone(),
        coefficients: model.coefficients[..p].to_vec(),
        covariance: model.covariance.view((0, 0), (p, p)).into_owned(),
        scale: model.scale,
        lambdas: model.lambdas.clone(),
        edf: model.edf.clone(),
        n: model.n,
        n_subjects: model.n_subjects,
        term_pvalues: model.term_pvalues.clone(),
        covariate_ranges: model.covariate_ranges.clone(),
        covariate_deciles: model.covariate_deciles.clone(),
    }
}

impl PredictiveModel for StrippedModel {
    fn label(&self) -> &str {
        &self.cohort_label
    }
    fn n_obs(&self) -> usize {
        self.n
    }
    fn structure(&self) -> &ModelStructure {
        &self.structure
    }
    fn fixed_coefficients(&self) -> &[f64] {
        &self.coefficients
    }
    fn fixed_covariance(&self) -> DMatrixView<'_, f64> {
        self.covariance.as_view()
    }
    fn edf(&self) -> &BTreeMap<String, f64> {
        &self.edf
    }
    fn covariate_ranges(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.covariate_ranges
    }
    fn covariate_deciles(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.covariate_deciles
    }
}

impl StrippedModel {
    /// Canonical JSON: sorted keys, shortest round-trip numbers, no
    /// insignificant whitespace.
    pub fn to_canonical_json(&self) -> Result<Vec<u8>, ModelIoError> {
        let value = serde_json::to_value(self).map_err(|e| ModelIoError::SchemaViolation {
            pointer: String::new(),
            message: e.to_string(),
        })?;
        if let Some(pointer) = self.first_non_finite() {
            return Err(ModelIoError::NonFinite { pointer });
        }
        let mut out = String::new();
        write_canonical(&value, &mut out);
        Ok(out.into_bytes())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelIoError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| ModelIoError::SchemaViolation {
                pointer: String::new(),
                message: e.to_string(),
            })?;
        match value.get("format_version") {
            None => {
                return Err(ModelIoError::SchemaViolation {
                    pointer: "/format_version".into(),
                    message: "missing field `format_version`".into(),
                })
            }
            Some(v) => match v.as_i64() {
                Some(x) if x == i64::from(FORMAT_VERSION) => {}
                Some(x) => return Err(ModelIoError::VersionMismatch { found: x }),
                None => {
                    return Err(ModelIoError::SchemaViolation {
                        pointer: "/format_version".into(),
                        message: "expected an integer".into(),
                    })
                }
            },
        }
        let model: StrippedModel = serde_path_to_error::deserialize(value).map_err(|e| {
            let mut pointer = json_pointer(e.path());
            let message = e.inner().to_string();
            if let Some(field) = missing_field(&message) {
                pointer.push('/');
                pointer.push_str(&escape_pointer(field));
            }
            ModelIoError::SchemaViolation { pointer, message }
        })?;
        model.validate()?;
        Ok(model)
    }

    /// Pointer to the first non-finite estimate; serde_json would otherwise
    /// write it as `null`.
    fn first_non_finite(&self) -> Option<String> {
        let bad = |v: &f64| !v.is_finite();
        if let Some(i) = self.coefficients.iter().position(bad) {
            return Some(format!("/coefficients/{i}"));
        }
        if let Some(i) = self.covariance.iter().position(bad) {
            let p = self.covariance.nrows();
            return Some(format!("/covariance/{}/{}", i % p, i / p));
        }
        if bad(&self.scale) {
            return Some("/scale".into());
        }
        let maps = [
            ("lambdas", &self.lambdas),
            ("edf", &self.edf),
            ("term_pvalues", &self.term_pvalues),
        ];
        for (field, map) in maps {
            if let Some(k) = map.iter().find(|(_, v)| bad(v)).map(|(k, _)| k) {
                return Some(format!("/{field}/{}", escape_pointer(k)));
            }
        }
        for (k, (lo, hi)) in &self.covariate_ranges {
            if bad(lo) || bad(hi) {
                return Some(format!("/covariate_ranges/{}", escape_pointer(k)));
            }
        }
        for (k, d) in &self.covariate_deciles {
            if let Some(i) = d.iter().position(bad) {
                return Some(format!("/covariate_deciles/{}/{i}", escape_pointer(k)));
            }
        }
        None
    }

    /// Cross-field consistency checks beyond what the types enforce.
    pub fn validate(&self) -> Result<(), ModelIoError> {
        let p = self.structure.n_fixed();
        let violation = |pointer: &str, message: String| ModelIoError::SchemaViolation {
            pointer: pointer.into(),
            message,
        };
        if self.coefficients.len() != p {
            return Err(violation(
                "/coefficients",
                format!(
                    "expected {p} coefficients, found {}",
                    self.coefficients.len()
                ),
            ));
        }
        if self.covariance.nrows() != p || self.covariance.ncols() != p {
            return Err(violation(
                "/covariance",
                format!(
                    "expected a {p}x{p} matrix, found {}x{}",
                    self.covariance.nrows(),
                    self.covariance.ncols()
                ),
            ));
        }
        for (name, d) in &self.covariate_deciles {
            if d.len() != 9 {
                return Err(violation(
                    &format!("/covariate_deciles/{}", escape_pointer(name)),
                    format!("expected 9 deciles, found {}", d.len()),
                ));
            }
        }
        for s in &self.structure.smooths {
            if !self.covariate_ranges.contains_key(&s.covariate) {
                return Err(violation(
                    "/covariate_ranges",
                    format!("no range for smooth covariate `{}`", s.covariate),
                ));
            }
        }
        Ok(())
    }

    /// Lists every array whose length equals the number of observations or
    /// subjects; such an array could carry individual-level data.
    pub fn privacy_audit(&self) -> Result<(), ModelIoError> {
        let value = serde_json::to_value(self).expect("stripped model serializes");
        let mut forbidden = vec![self.n];
        forbidden.extend(self.n_subjects);
        let mut pointers = Vec::new();
        collect_arrays(&value, "", &forbidden, &mut pointers);
        if pointers.is_empty() {
            Ok(())
        } else {
            Err(ModelIoError::PrivacyViolation { pointers })
        }
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
        let path = path.as_ref();
        let bytes = self.to_canonical_json()?;
        std::fs::write(path, bytes).map_err(|source| ModelIoError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, ModelIoError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&bytes)
    }
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn collect_arrays(value: &Value, at: &str, forbidden: &[usize], out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                collect_arrays(v, &format!("{at}/{}", escape_pointer(k)), forbidden, out);
            }
        }
        Value::Array(items) => {
            if forbidden.contains(&items.len()) {
                out.push(at.to_string());
            }
            for (i, v) in items.iter().enumerate() {
                collect_arrays(v, &format!("{at}/{i}"), forbidden, out);
            }
        }
        _ => {}
    }
}

fn escape_pointer(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut pointer = String::new();
    for segment in path.iter() {
        match segment {
            Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                pointer.push('/');
                pointer.push_str(&escape_pointer(key));
            }
            Segment::Unknown => {}
        }
    }
    pointer
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointer_escaping() {
        assert_eq!(escape_pointer("a/b~c"), "a~1b~0c");
        assert_eq!(
            missing_field("missing field `covariance`"),
            Some("covariance")
        );
        assert_eq!(missing_field("invalid type"), None);
    }

    #[test]
    fn canonical_writer_sorts_keys() {
        let v: Value =
            serde_json::from_str(r#"{"b":1,"a":[0.1,2.5e-8,{"z":null,"y":true}]}"#).unwrap();
        let mut s = String::new();
        write_canonical(&v, &mut s);
        assert_eq!(s, r#"{"a":[0.1,2.5e-8,{"y":true,"z":null}],"b":1}"#);
    }

    #[test]
    fn array_audit_finds_matching_lengths() {
        let v: Value = serde_json::from_str(r#"{"a":[1,2,3],"b":{"c":[1,2]}}"#).unwrap();
        let mut out = Vec::new();
        collect_arrays(&v, "", &[3], &mut out);
        assert_eq!(out, vec!["/a".to_string()]);
    }
}
