use std::fs::File;
use std::io::{self, Write};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    B(bool),
    S(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            // 17 significant digits round-trip any f64
            Self::F(v) if v.is_finite() => format!("{v:.16e}"),
            Self::F(v) => v.to_string(),
            Self::I(v) => v.to_string(),
            Self::B(v) => v.to_string(),
            Self::S(v) => v.clone(),
            Self::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Self::F(v) => json!(v),
            Self::I(v) => json!(v),
            Self::B(v) => json!(v),
            Self::S(v) => json!(v),
            Self::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::F(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Self::Empty, Self::F)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Self::I(i64::from(v))
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::I(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::S(v)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> =
                        self.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// What a command produced: the JSON payload and a flat table for CSV.
pub struct Report {
    pub command: &'static str,
    pub result: Value,
    pub table: Table,
}

impl Report {
    pub fn new(command: &'static str, result: impl Serialize, table: Table) -> Result<Self, CliError> {
        Ok(Self { command, result: serde_json::to_value(result)?, table })
    }

    pub fn write(&self, cfg: &RunConfig) -> Result<(), CliError> {
        let sink: Box<dyn Write> = match &cfg.output {
            Some(path) => Box::new(File::create(path)?),
            None => Box::new(io::stdout().lock()),
        };
        let mut sink = io::BufWriter::new(sink);
        match cfg.format {
            Format::Json => {
                let doc = json!({
                    "schema_version": SCHEMA_VERSION,
                    "command": self.command,
                    "config": cfg,
                    "result": self.result,
                });
                serde_json::to_writer_pretty(&mut sink, &doc)?;
                writeln!(sink)?;
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(&mut sink);
                w.write_record(&self.table.columns)?;
                for row in &self.table.rows {
                    w.write_record(row.iter().map(Cell::csv))?;
                }
                w.flush()?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}
