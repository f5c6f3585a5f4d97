use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::{stream, Purpose};

/// Feature rows with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidProblem(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidProblem("ragged feature rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidProblem("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Indices of rows carrying `label`, ascending.
    pub fn class_indices(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn max_row_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Standardize each column to zero mean and unit (population) variance.
/// Constant columns become all-zero.
pub fn standardize_columns(rows: &mut [Vec<f64>]) {
    let Some(d) = rows.first().map(Vec::len) else {
        return;
    };
    let m = rows.len() as f64;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
}

/// Load a numeric CSV whose last column is a 0/1 label. A first line with no
/// numeric field is treated as a header. Features are standardized.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::DatasetShape {
            path: path.into(),
            message: e.to_string(),
        })?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 1;
        if i == 0 && record.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 {
            return Err(Error::Dataset {
                path: path.into(),
                row: line,
                column: record.len(),
                message: "need at least one feature column and a label".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Dataset {
                    path: path.into(),
                    row: line,
                    column: record.len(),
                    message: format!("expected {w} columns"),
                })
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Dataset {
                path: path.into(),
                row: line,
                column: j + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset {
                    path: path.into(),
                    row: line,
                    column: j + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        let label = values.pop().expect("record has at least two fields");
        let label = match label {
            0.0 => 0,
            1.0 => 1,
            other => {
                return Err(Error::Dataset {
                    path: path.into(),
                    row: line,
                    column: record.len(),
                    message: format!("label {other} is not 0 or 1"),
                })
            }
        };
        rows.push(values);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::DatasetShape {
            path: path.into(),
            message: "no data rows".into(),
        });
    }
    standardize_columns(&mut rows);
    LabeledDataset::new(rows, labels)
}

/// Two Gaussian classes separated along a random unit direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub d_feat: usize,
    /// Fraction of rows in class 1 (the constrained class).
    pub class_balance: f64,
    /// Distance between class means, in per-feature standard deviations.
    pub separation: f64,
    pub seed: u64,
}

pub fn synthetic_np_dataset(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.rows < 2 || spec.d_feat == 0 {
        return Err(Error::InvalidProblem(
            "synthetic data needs rows >= 2 and d_feat >= 1".into(),
        ));
    }
    if !(spec.class_balance > 0.0 && spec.class_balance < 1.0) {
        return Err(Error::InvalidProblem(format!(
            "class_balance {} outside (0, 1)",
            spec.class_balance
        )));
    }
    if !(spec.separation.is_finite() && spec.separation >= 0.0) {
        return Err(Error::InvalidProblem("separation must be finite and >= 0".into()));
    }
    let mut rng = stream(spec.seed, Purpose::Problem, 0, 0);
    let mut direction: Vec<f64> = (0..spec.d_feat).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let positives = ((spec.rows as f64 * spec.class_balance).round() as usize).clamp(1, spec.rows - 1);
    let mut rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for i in 0..spec.rows {
        let label = u8::from(i >= spec.rows - positives);
        let sign = if label == 1 { 0.5 } else { -0.5 };
        let row = direction
            .iter()
            .map(|u| sign * spec.separation * u + rng.sample::<f64, _>(StandardNormal))
            .collect();
        rows.push(row);
        labels.push(label);
    }
    standardize_columns(&mut rows);
    LabeledDataset::new(rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_standardizes() {
        let f = write_tmp("1,0,0\n2,0,1\n3,0,1\n");
        let data = load_csv(f.path()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.num_features(), 2);
        assert_eq!(data.labels(), &[0, 1, 1]);
        assert!(data.rows().iter().all(|r| r[1] == 0.0));
        let col: Vec<f64> = data.rows().iter().map(|r| r[0]).collect();
        // population sd of (1,2,3) is sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        assert!((col[0] + 1.0 / s).abs() < 1e-12 && col[1].abs() < 1e-12 && (col[2] - 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn header_line_is_skipped() {
        let f = write_tmp("a,b,label\n1,2,0\n3,4,1\n");
        let data = load_csv(f.path()).unwrap();
        assert_eq!(data.len(), 2);
    }

    #[test]
    fn rejects_bad_files() {
        let empty = write_tmp("");
        assert!(load_csv(empty.path()).is_err());

        let bad_label = write_tmp("1,0,0\n2,0,2\n");
        match load_csv(bad_label.path()).unwrap_err() {
            Error::Dataset { row, column, .. } => assert_eq!((row, column), (2, 3)),
            e => panic!("unexpected error {e}"),
        }

        let bad_number = write_tmp("1,0,0\n2,x,1\n");
        match load_csv(bad_number.path()).unwrap_err() {
            Error::Dataset { row, column, .. } => assert_eq!((row, column), (2, 2)),
            e => panic!("unexpected error {e}"),
        }

        assert!(load_csv("/nonexistent/data.csv").is_err());
    }

    #[test]
    fn synthetic_is_reproducible_and_balanced() {
        let spec = SyntheticSpec {
            rows: 400,
            d_feat: 5,
            class_balance: 0.5,
            separation: 4.0,
            seed: 3,
        };
        let a = synthetic_np_dataset(&spec).unwrap();
        let b = synthetic_np_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_indices(1).len(), 200);
        assert_eq!(a.num_features(), 5);
    }
}
