//! CSV tables with JSON schema sidecars, and line-oriented JSON logs.
//!
//! Every table `name.csv` is accompanied by `name.schema.json` describing
//! its columns, so downstream tools can validate a file before reading it.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Integer,
    Number,
    Boolean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
    pub description: String,
    /// Whether empty cells are allowed (used for flagged non-values).
    #[serde(default)]
    pub nullable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table: String,
    pub description: String,
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn new(table: &str, description: &str) -> Self {
        Self { table: table.into(), description: description.into(), columns: Vec::new() }
    }

    pub fn col(mut self, name: &str, kind: ColumnType, description: &str) -> Self {
        self.columns.push(Column { name: name.into(), kind, description: description.into(), nullable: false });
        self
    }

    pub fn nullable(mut self, name: &str, kind: ColumnType, description: &str) -> Self {
        self.columns.push(Column { name: name.into(), kind, description: description.into(), nullable: true });
        self
    }

    pub fn headers(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Checks one row's arity and cell types.
    pub fn check_row(&self, row: &[String]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::contract(format!(
                "table '{}' row has {} cells, schema has {} columns",
                self.table,
                row.len(),
                self.columns.len()
            )));
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            if cell.is_empty() {
                if col.nullable {
                    continue;
                }
                return Err(Error::contract(format!("column '{}' of '{}' may not be empty", col.name, self.table)));
            }
            let ok = match col.kind {
                ColumnType::String => true,
                ColumnType::Integer => cell.parse::<i64>().is_ok(),
                ColumnType::Number => cell.parse::<f64>().is_ok(),
                ColumnType::Boolean => cell == "true" || cell == "false",
            };
            if !ok {
                return Err(Error::contract(format!(
                    "cell '{cell}' in column '{}' of '{}' is not a {:?}",
                    col.name, self.table, col.kind
                )));
            }
        }
        Ok(())
    }
}

pub fn schema_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("schema.json")
}

/// Formats a float so it parses back to the same bits; NaN becomes an empty cell.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

/// Writes `rows` to `path` (atomically, via a temporary file) plus the schema sidecar.
pub fn write_table(path: &Path, schema: &TableSchema, rows: &[Vec<String>]) -> Result<()> {
    for r in rows {
        schema.check_row(r)?;
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(schema.headers())?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    fs::write(schema_path(path), serde_json::to_vec_pretty(schema)?)?;
    Ok(())
}

/// Reads a table written by [`write_table`], validating it against its sidecar.
pub fn read_table(path: &Path) -> Result<(TableSchema, Vec<Vec<String>>)> {
    let schema: TableSchema = serde_json::from_slice(&fs::read(schema_path(path))?)?;
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if headers != schema.headers() {
        return Err(Error::contract(format!("header of {} does not match its schema", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let row: Vec<String> = rec?.iter().map(str::to_owned).collect();
        schema.check_row(&row)?;
        rows.push(row);
    }
    Ok((schema, rows))
}

/// Appends one JSON object per line.
#[derive(Debug)]
pub struct JsonLog {
    file: File,
}

impl JsonLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        Ok(Self { file: OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn write(&mut self, value: &serde_json::Value) -> Result<()> {
        let mut line = serde_json::to_vec(value)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        Ok(())
    }
}
