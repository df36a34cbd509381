//! Self-describing result tables: CSV rows, a column schema and a pass/fail summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

/// One CSV column and what it holds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub description: &'static str,
}

pub const fn col(name: &'static str, description: &'static str) -> Column {
    Column { name, description }
}

#[derive(Clone, Debug)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x:e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // non-finite values are not representable in JSON
            Cell::Num(x) if !x.is_finite() => Value::String(x.to_string()),
            Cell::Num(x) => json!(x),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

/// Rows of measured values next to their bounds, each with a verdict.
pub struct Table {
    pub suite: &'static str,
    pub columns: Vec<Column>,
    rows: Vec<(Vec<Cell>, bool)>,
}

impl Table {
    pub fn new(suite: &'static str, columns: Vec<Column>) -> Self {
        Table { suite, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, cells: Vec<Cell>, pass: bool) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match the header");
        self.rows.push((cells, pass));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.1)
    }

    /// 0-based indices of failing rows.
    pub fn failures(&self) -> Vec<usize> {
        self.rows.iter().enumerate().filter(|(_, r)| !r.1).map(|(i, _)| i).collect()
    }

    fn row_object(&self, i: usize) -> Value {
        let mut obj = Map::new();
        obj.insert("row".into(), json!(i));
        for (c, cell) in self.columns.iter().zip(&self.rows[i].0) {
            obj.insert(c.name.into(), cell.json());
        }
        Value::Object(obj)
    }

    /// `name=value` pairs for one row, for error messages.
    pub fn describe_row(&self, i: usize) -> String {
        self.columns
            .iter()
            .zip(&self.rows[i].0)
            .map(|(c, v)| format!("{}={}", c.name, v.csv()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.columns.iter().map(|c| c.name).chain(["pass"]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (cells, pass) in &self.rows {
            let line: Vec<String> = cells.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{},{}", line.join(","), pass);
        }
        out
    }

    pub fn schema(&self) -> Value {
        let mut columns: Vec<Value> = self.columns.iter().map(|c| json!(c)).collect();
        columns.push(json!(col("pass", "true when every assertion on this row holds")));
        json!({
            "suite": self.suite,
            "csv": format!("{}.csv", self.suite),
            "columns": columns,
        })
    }

    pub fn summary(&self, parameters: Value) -> Value {
        json!({
            "suite": self.suite,
            "pass": self.passed(),
            "rows": self.len(),
            "failed_rows": self.failures().into_iter().map(|i| self.row_object(i)).collect::<Vec<_>>(),
            "parameters": parameters,
        })
    }

    /// Write `<suite>.csv`, `<suite>.schema.json` and `<suite>.summary.json` into `dir`.
    pub fn write(&self, dir: &Path, parameters: Value) -> std::io::Result<Vec<PathBuf>> {
        let files = [
            (format!("{}.csv", self.suite), self.to_csv()),
            (format!("{}.schema.json", self.suite), pretty(&self.schema())),
            (format!("{}.summary.json", self.suite), pretty(&self.summary(parameters))),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}
