//! Column-oriented numeric tables with CSV input/output.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {found} fields, header has {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{name}` has {found} rows, table has {expected}")]
    Length {
        name: String,
        expected: usize,
        found: usize,
    },
}

/// Format a float with the shortest representation that parses back exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_columns(
        columns: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, DataError> {
        let mut t = Self::new();
        for (name, col) in columns {
            t.push_column(name, col)?;
        }
        Ok(t)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), DataError> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(DataError::DuplicateColumn(name));
        }
        if !self.columns.is_empty() && values.len() != self.n_rows() {
            return Err(DataError::Length {
                name,
                expected: self.n_rows(),
                found: values.len(),
            });
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.index_of(name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn column_at(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(DataError::Ragged {
                    row: row + 1,
                    expected: names.len(),
                    found: record.len(),
                });
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| DataError::Parse {
                    row: row + 1,
                    column: names[j].clone(),
                    value: field.to_string(),
                })?;
                columns[j].push(v);
            }
        }
        DataTable::from_columns(names.into_iter().zip(columns))
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        let mut buf = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows() {
            buf.clear();
            buf.extend(self.columns.iter().map(|c| fmt_f64(c[r])));
            w.write_record(&buf)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let t = DataTable::from_columns([
            ("a".to_string(), vec![0.1, 1.0 / 3.0, -2.5e-300]),
            ("b".to_string(), vec![1e20, f64::MIN_POSITIVE, 7.0]),
        ])
        .unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let back = DataTable::read_csv(out.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            DataTable::read_csv("a,b\n1,x\n".as_bytes()),
            Err(DataError::Parse { .. })
        ));
        let mut t = DataTable::new();
        t.push_column("a", vec![1.0]).unwrap();
        assert!(t.push_column("a", vec![1.0]).is_err());
        assert!(t.push_column("b", vec![1.0, 2.0]).is_err());
        assert!(t.column("zz").is_err());
    }
}
