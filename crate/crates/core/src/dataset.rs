//! Labeled feature matrices and their CSV form: a header row, one sample per
//! line, the final column an integer class label.

use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        let feature_names = (0..features.ncols()).map(|i| format!("f{i}")).collect();
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Splits into the first `n_first` rows and the rest.
    pub fn split_at(&self, n_first: usize) -> (Dataset, Dataset) {
        let n_first = n_first.min(self.len());
        let first: Vec<usize> = (0..n_first).collect();
        let rest: Vec<usize> = (n_first..self.len()).collect();
        (self.select(&first), self.select(&rest))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push("label".to_string());
        w.write_record(&header)?;
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::invalid("dataset csv needs at least one feature and a label column"));
        }
        let p = header.len() - 1;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for field in rec.iter().take(p) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid(format!("line {}: bad feature value {field:?}", line + 2))
                })?;
                values.push(v);
            }
            let label = rec.get(p).unwrap_or_default().trim();
            labels.push(label.parse::<usize>().map_err(|_| {
                Error::invalid(format!("line {}: bad label {label:?}", line + 2))
            })?);
        }
        let features = Array2::from_shape_vec((labels.len(), p), values)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut ds = Dataset::new(features, labels)?;
        ds.feature_names = header.iter().take(p).map(str::to_string).collect();
        Ok(ds)
    }
}
