//! Minimal column table for model data and prediction grids.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("CSV parse error at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing value in column `{column}` at data row {row}")]
    MissingValue { column: String, row: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NotNumeric(String),
    #[error("column `{column}` has {found} values, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("invalid grid specification `{spec}`: {message}")]
    Grid { spec: String, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Column {
    Numeric {
        values: Vec<f64>,
    },
    /// Categorical column; `codes[i]` indexes `levels`.
    Factor {
        levels: Vec<String>,
        codes: Vec<usize>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric { values } => values.len(),
            Column::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a factor with levels sorted lexicographically.
    pub fn factor<S: AsRef<str>>(values: &[S]) -> Column {
        let levels: Vec<String> = values
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let codes = values
            .iter()
            .map(|v| {
                levels
                    .binary_search_by(|l| l.as_str().cmp(v.as_ref()))
                    .unwrap()
            })
            .collect();
        Column::Factor { levels, codes }
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric { values } => Column::Numeric {
                values: rows.iter().map(|&i| values[i]).collect(),
            },
            Column::Factor { levels, codes } => Column::Factor {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }

    /// Label of row `i` (level name for factors).
    pub fn label(&self, i: usize) -> String {
        match self {
            Column::Numeric { values } => values[i].to_string(),
            Column::Factor { levels, codes } => levels[codes[i]].clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self, DataError> {
        self.push(name, Column::Numeric { values })?;
        Ok(self)
    }

    pub fn push(&mut self, name: &str, column: Column) -> Result<(), DataError> {
        if self.names.iter().any(|n| n == name) {
            return Err(DataError::DuplicateColumn(name.to_string()));
        }
        if let Some(first) = self.columns.first() {
            if first.len() != column.len() {
                return Err(DataError::LengthMismatch {
                    column: name.to_string(),
                    expected: first.len(),
                    found: column.len(),
                });
            }
        }
        self.names.push(name.to_string());
        self.columns.push(column);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match self.column(name)? {
            Column::Numeric { values } => Ok(values),
            Column::Factor { .. } => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    /// Row subset, preserving column order and factor levels.
    pub fn take_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    /// Reads a headed, comma-separated table. Columns whose every value
    /// parses as a number are numeric; other columns become factors. Empty
    /// cells and `NA` are rejected.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_error)?;
            for (j, field) in record.iter().enumerate() {
                if field.is_empty() || field == "NA" {
                    return Err(DataError::MissingValue {
                        column: headers[j].clone(),
                        row: row + 1,
                    });
                }
                raw[j].push(field.to_string());
            }
        }
        let mut table = DataTable::new();
        for (name, cells) in headers.iter().zip(raw) {
            let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse().ok()).collect();
            let column = match parsed {
                Some(values) => Column::Numeric { values },
                None => Column::factor(&cells),
            };
            table.push(name, column)?;
        }
        Ok(table)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for i in 0..self.n_rows() {
            let row: Vec<String> = self.columns.iter().map(|c| c.label(i)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses a grid such as `Age=20:90:0.1,PSQI=1,Sex=Female` into the
    /// Cartesian product of its entries. `from:to:step` ranges include `to`
    /// when it lies on the step lattice.
    pub fn parse_grid(spec: &str) -> Result<Self, DataError> {
        let err = |message: String| DataError::Grid {
            spec: spec.to_string(),
            message,
        };
        let mut axes: Vec<(String, Vec<String>, bool)> = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| err(format!("`{part}` is not of the form name=value")))?;
            let name = name.trim().to_string();
            let value = value.trim();
            if value.contains(':') {
                let nums: Vec<f64> = value
                    .split(':')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| err(format!("range `{value}` must be from:to:step numbers")))?;
                let [from, to, step] = nums[..] else {
                    return Err(err(format!("range `{value}` must have three parts")));
                };
                if !(step > 0.0 && to >= from) {
                    return Err(err(format!(
                        "range `{value}` needs step > 0 and to >= from"
                    )));
                }
                let count = ((to - from) / step + 1e-9).floor() as usize + 1;
                let vals = (0..count)
                    .map(|i| (from + step * i as f64).to_string())
                    .collect();
                axes.push((name, vals, true));
            } else {
                let numeric = value.parse::<f64>().is_ok();
                axes.push((name, vec![value.to_string()], numeric));
            }
        }
        if axes.is_empty() {
            return Err(err("no grid entries".into()));
        }
        let total: usize = axes.iter().map(|a| a.1.len()).product();
        let mut table = DataTable::new();
        let mut repeat = total;
        for (name, vals, numeric) in &axes {
            repeat /= vals.len();
            let cycle = total / (vals.len() * repeat);
            let cells: Vec<&String> = (0..cycle)
                .flat_map(|_| vals.iter().flat_map(|v| std::iter::repeat_n(v, repeat)))
                .collect();
            let column = if *numeric {
                Column::Numeric {
                    values: cells.iter().map(|c| c.parse().unwrap()).collect(),
                }
            } else {
                Column::factor(&cells)
            };
            table.push(name, column)?;
        }
        Ok(table)
    }
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Csv {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_numeric_and_factor_columns() {
        let csv = "y,x,sex\n1.5,0.1,F\n2.5,0.2,M\n3,0.3,F\n";
        let t = DataTable::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.numeric("x").unwrap(), &[0.1, 0.2, 0.3]);
        match t.column("sex").unwrap() {
            Column::Factor { levels, codes } => {
                assert_eq!(levels, &["F", "M"]);
                assert_eq!(codes, &[0, 1, 0]);
            }
            _ => panic!("expected factor"),
        }
        assert!(matches!(t.numeric("sex"), Err(DataError::NotNumeric(_))));
        assert!(matches!(t.column("age"), Err(DataError::UnknownColumn(_))));
    }

    #[test]
    fn missing_values_report_row() {
        let csv = "y,x\n1,2\n3,\n";
        match DataTable::from_csv_reader(csv.as_bytes()) {
            Err(DataError::MissingValue { column, row }) => {
                assert_eq!(column, "x");
                assert_eq!(row, 2);
            }
            other => panic!("{other:?}"),
        }
        let csv = "y,x\n1,2\nNA,3\n";
        assert!(matches!(
            DataTable::from_csv_reader(csv.as_bytes()),
            Err(DataError::MissingValue { row: 2, .. })
        ));
    }

    #[test]
    fn ragged_rows_report_line() {
        let csv = "y,x\n1,2\n3,4,5\n";
        match DataTable::from_csv_reader(csv.as_bytes()) {
            Err(DataError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_spec_expands_ranges_and_fixed_values() {
        let g = DataTable::parse_grid("Age=20:90:0.1,PSQI=1,Sex=Female").unwrap();
        assert_eq!(g.n_rows(), 701);
        let age = g.numeric("Age").unwrap();
        assert_eq!(age[0], 20.0);
        assert!((age[700] - 90.0).abs() < 1e-9);
        assert!(g.numeric("PSQI").unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(g.column("Sex").unwrap().label(5), "Female");

        let g2 = DataTable::parse_grid("a=0:1:0.5,b=0:1:1").unwrap();
        assert_eq!(g2.n_rows(), 6);
        assert_eq!(g2.numeric("a").unwrap(), &[0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(g2.numeric("b").unwrap(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        assert!(DataTable::parse_grid("Age").is_err());
        assert!(DataTable::parse_grid("Age=1:0:1").is_err());
    }
}
