//! Tabular data model, CSV ingestion, fold assignment, and the seeded-stream
//! contract shared by every stochastic operation.

mod rng;

pub use rng::{standard_normal, RngSeed};

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};

/// Immutable numeric table: an `n x p` feature matrix plus a response vector.
///
/// Construction validates the invariants once (finite values, unique names,
/// matching lengths); afterwards the table is safe to share across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>, // row-major n*p
    response: Vec<f64>,
    feature_names: Vec<String>,
    response_name: String,
    n: usize,
    p: usize,
}

impl Dataset {
    /// Build a dataset from row-major feature rows.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        response: Vec<f64>,
        feature_names: Vec<String>,
        response_name: &str,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        let p = feature_names.len();
        if p == 0 {
            return Err(Error::EmptyTable);
        }
        if response.len() != n {
            return Err(Error::InvalidParameter(format!(
                "response length {} does not match row count {}",
                response.len(),
                n
            )));
        }
        for (j, name) in feature_names.iter().enumerate() {
            if feature_names[..j].contains(name) {
                return Err(Error::DuplicateFeatureName(name.clone()));
            }
        }
        let mut features = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::LengthMismatch {
                    got: row.len(),
                    expected: p,
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        row: i + 1,
                        column: feature_names[j].clone(),
                    });
                }
                features.push(v);
            }
            if !response[i].is_finite() {
                return Err(Error::NonFiniteValue {
                    row: i + 1,
                    column: response_name.to_string(),
                });
            }
        }
        Ok(Self {
            features,
            response,
            feature_names,
            response_name: response_name.to_string(),
            n,
            p,
        })
    }

    /// Build a dataset from feature columns.
    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        response: Vec<f64>,
        feature_names: Vec<String>,
        response_name: &str,
    ) -> Result<Self> {
        let n = response.len();
        if columns.len() != feature_names.len() {
            return Err(Error::InvalidParameter(
                "column count does not match name count".into(),
            ));
        }
        for col in &columns {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    got: col.len(),
                    expected: n,
                });
            }
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        Self::from_rows(rows, response, feature_names, response_name)
    }

    /// Load an RFC-4180-style CSV with a header row. All columns except
    /// `response_column` become features, in header order.
    pub fn load_csv(path: &Path, response_column: &str, delimiter: char) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .has_headers(true)
            .from_reader(file);

        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let response_idx = headers
            .iter()
            .position(|h| h == response_column)
            .ok_or_else(|| Error::UnknownResponseColumn(response_column.to_string()))?;
        let feature_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != response_idx)
            .map(|(_, h)| h.clone())
            .collect();
        if feature_names.is_empty() {
            return Err(Error::EmptyTable);
        }

        let mut rows = Vec::new();
        let mut response = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (j, cell) in record.iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                    row: i + 1,
                    column: headers.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
                    value: cell.to_string(),
                })?;
                if j == response_idx {
                    response.push(value);
                } else {
                    row.push(value);
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        Self::from_rows(rows, response, feature_names, response_column)
    }

    /// Write the table back to CSV (features in order, response last).
    /// Floats are rendered shortest-round-trip, so reload is exact.
    pub fn write_csv(&self, path: &Path, delimiter: char) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = csv::WriterBuilder::new()
            .delimiter(delimiter as u8)
            .from_writer(file);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.response_name);
        writer.write_record(&header)?;
        let mut buf = Vec::with_capacity(self.p + 1);
        for i in 0..self.n {
            buf.clear();
            for &v in self.row(i) {
                buf.push(format_float(v));
            }
            buf.push(format_float(self.response[i]));
            writer.write_record(&buf)?;
        }
        writer.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.p + j]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Gather feature column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.feature(i, j)).collect()
    }

    /// New dataset holding the given rows (in the given order).
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let picked: Vec<Vec<f64>> = rows.iter().map(|&i| self.row(i).to_vec()).collect();
        let response: Vec<f64> = rows.iter().map(|&i| self.response[i]).collect();
        Self::from_rows(picked, response, self.feature_names.clone(), &self.response_name)
    }
}

/// Shortest decimal that parses back to the identical f64.
fn format_float(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

/// Assignment of each row to one of `k` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Rows belonging to `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows outside `fold` (the training portion), ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Random balanced partition of `n` rows into `k` folds; fold sizes differ by
/// at most one. Deterministic given the seed.
pub fn make_folds(n: usize, k: usize, seed: RngSeed) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidParameter("fold count must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "fold count {k} exceeds row count {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_minimal_csv() {
        let f = write_tmp("x,y\n1.0,2.0\n");
        let d = Dataset::load_csv(f.path(), "y", ',').unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.p(), 1);
        assert_eq!(d.response(), &[2.0]);
        assert_eq!(d.feature(0, 0), 1.0);
    }

    #[test]
    fn response_extracted_from_middle_column() {
        let f = write_tmp("a,y,b\n1,5,2\n3,6,4\n");
        let d = Dataset::load_csv(f.path(), "y", ',').unwrap();
        assert_eq!(d.feature_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.response(), &[5.0, 6.0]);
    }

    #[test]
    fn unknown_response_column_rejected() {
        let f = write_tmp("x,y\n1.0,2.0\n");
        let err = Dataset::load_csv(f.path(), "z", ',').unwrap_err();
        assert!(matches!(err, Error::UnknownResponseColumn(_)));
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let f = write_tmp("x,y\n1.0,2.0\n1.5,oops\n");
        match Dataset::load_csv(f.path(), "y", ',').unwrap_err() {
            Error::NonNumericCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_table_rejected() {
        let f = write_tmp("x,y\n");
        assert!(matches!(
            Dataset::load_csv(f.path(), "y", ',').unwrap_err(),
            Error::EmptyTable
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Dataset::load_csv(Path::new("/nonexistent/file.csv"), "y", ',').unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn nan_rejected_at_ingestion() {
        let err = Dataset::from_rows(
            vec![vec![f64::NAN]],
            vec![1.0],
            vec!["x".into()],
            "y",
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
    }

    #[test]
    fn semicolon_delimiter() {
        let f = write_tmp("x;y\n1.5;2.5\n");
        let d = Dataset::load_csv(f.path(), "y", ';').unwrap();
        assert_eq!(d.feature(0, 0), 1.5);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = Dataset::from_rows(
            vec![
                vec![0.1 + 0.2, 1e-300],
                vec![-3.5, 123456789.123456789],
            ],
            vec![std::f64::consts::PI, -0.0],
            vec!["a".into(), "b".into()],
            "y",
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path(), ',').unwrap();
        let back = Dataset::load_csv(f.path(), "y", ',').unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn folds_balanced_when_divisible() {
        let folds = make_folds(10, 5, RngSeed::new(1)).unwrap();
        for f in 0..5 {
            assert_eq!(folds.members(f).len(), 2);
        }
    }

    #[test]
    fn folds_345_by_5_are_all_69() {
        let folds = make_folds(345, 5, RngSeed::new(1)).unwrap();
        for f in 0..5 {
            assert_eq!(folds.members(f).len(), 69);
        }
    }

    #[test]
    fn folds_7_by_3_sizes() {
        let folds = make_folds(7, 3, RngSeed::new(2)).unwrap();
        let mut sizes: Vec<usize> = (0..3).map(|f| folds.members(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn folds_partition_rows() {
        let n = 23;
        let folds = make_folds(n, 4, RngSeed::new(3)).unwrap();
        let mut seen = vec![false; n];
        for f in 0..4 {
            for i in folds.members(f) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn fold_errors() {
        assert!(make_folds(3, 0, RngSeed::new(1)).is_err());
        assert!(make_folds(3, 4, RngSeed::new(1)).is_err());
    }

    #[test]
    fn folds_deterministic() {
        let a = make_folds(50, 5, RngSeed::new(9)).unwrap();
        let b = make_folds(50, 5, RngSeed::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
