//! Plot-ready CSV tables: comma separation, '.' decimal point, numbers at
//! 17 significant digits so every f64 survives a write/read round trip
//! bit-exactly and checksums are stable across runs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv io: {0}")]
    Io(#[from] io::Error),
    #[error("{path} line {line}: {got} fields, header has {want}")]
    FieldCount {
        path: String,
        line: usize,
        want: usize,
        got: usize,
    },
    #[error("{path} line {line}: cannot parse {text:?} as a number")]
    BadNumber {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{0}: empty file")]
    Empty(String),
}

/// One value as a CSV field. Integer-valued entries (step counters, seeds)
/// print without an exponent; everything else gets the full 17 significant
/// digits.
pub fn format_value(x: f64) -> String {
    if x == x.trunc() && x.abs() < 9.0e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.16e}")
    }
}

/// Numeric table with named columns, kept entirely in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends one row; the width must match the header.
    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row.to_vec());
    }

    /// Copy of the named column, if present.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for &x in row {
                if !first {
                    out.push(',');
                }
                let _ = write!(out, "{}", format_value(x));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CsvError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Table, CsvError> {
        let text = fs::read_to_string(path)?;
        Table::parse(&text, &path.display().to_string())
    }

    /// Parses CSV text; `origin` labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Table, CsvError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| CsvError::Empty(origin.to_string()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(CsvError::FieldCount {
                    path: origin.to_string(),
                    line: idx + 1,
                    want: columns.len(),
                    got: fields.len(),
                });
            }
            let mut row = Vec::with_capacity(fields.len());
            for f in fields {
                row.push(f.trim().parse::<f64>().map_err(|_| CsvError::BadNumber {
                    path: origin.to_string(),
                    line: idx + 1,
                    text: f.to_string(),
                })?);
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }
}
