//! Named columns of scalars and their CSV encoding.
//!
//! Floats are written in Rust's shortest round-trip form, so a value read
//! back with any correct parser is bit-identical. Rows end with `\n`.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int(Vec<i64>),
    Float(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Int(v) => v.len(),
            Column::Float(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Int(v) => v[row].to_string(),
            Column::Float(v) => format_float(v[row]),
            Column::Text(v) => v[row].clone(),
        }
    }
}

/// Value of one cell when building a frame row by row.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl MetricFrame {
    /// Empty frame; `schema` gives each column name and whether it holds integers.
    pub fn new(schema: &[(&str, bool)]) -> Result<Self> {
        let kinds: Vec<(&str, Kind)> =
            schema.iter().map(|(n, int)| (*n, if *int { Kind::Int } else { Kind::Float })).collect();
        Self::with_kinds(&kinds)
    }

    pub fn with_kinds(schema: &[(&str, Kind)]) -> Result<Self> {
        let mut names: Vec<String> = Vec::with_capacity(schema.len());
        for (name, _) in schema {
            if names.iter().any(|n| n == name) {
                return Err(Error::Config(format!("duplicate column `{name}`")));
            }
            names.push(name.to_string());
        }
        let columns = schema
            .iter()
            .map(|(_, kind)| match kind {
                Kind::Int => Column::Int(Vec::new()),
                Kind::Float => Column::Float(Vec::new()),
                Kind::Text => Column::Text(Vec::new()),
            })
            .collect();
        Ok(MetricFrame { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    pub fn floats(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            Column::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn ints(&self, name: &str) -> Option<&[i64]> {
        match self.column(name)? {
            Column::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn texts(&self, name: &str) -> Option<&[String]> {
        match self.column(name)? {
            Column::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn push(&mut self, row: &[Cell]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension { expected: self.columns.len(), got: row.len() });
        }
        for (i, (col, cell)) in self.columns.iter().zip(row).enumerate() {
            let ok = matches!(
                (col, cell),
                (Column::Int(_), Cell::Int(_)) | (Column::Float(_), Cell::Float(_)) | (Column::Text(_), Cell::Text(_))
            );
            if !ok {
                return Err(Error::Config(format!("cell type mismatch in column `{}`", self.names[i])));
            }
        }
        for (col, cell) in self.columns.iter_mut().zip(row) {
            match (col, cell) {
                (Column::Int(v), Cell::Int(x)) => v.push(*x),
                (Column::Float(v), Cell::Float(x)) => v.push(*x),
                (Column::Text(v), Cell::Text(x)) => v.push(x.clone()),
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: &MetricFrame) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("frames have different columns".into()));
        }
        for (a, b) in self.columns.iter_mut().zip(&other.columns) {
            match (a, b) {
                (Column::Int(x), Column::Int(y)) => x.extend_from_slice(y),
                (Column::Float(x), Column::Float(y)) => x.extend_from_slice(y),
                (Column::Text(x), Column::Text(y)) => x.extend_from_slice(y),
                _ => return Err(Error::Config("frames have different column types".into())),
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.names)?;
        for row in 0..self.len() {
            w.write_record(self.columns.iter().map(|c| c.cell(row)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }
}
