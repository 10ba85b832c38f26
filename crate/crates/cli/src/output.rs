//! Bit-stable serialization of results.
//!
//! Every float is written as `{:.16e}` (17 significant digits, exact round
//! trip), both in CSV cells and in JSON through a custom formatter.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::ser::{Serialize, SerializeSeq, Serializer};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::CliError;

pub const ARTIFACT: &str = "expertgame";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn csv_field(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Int(v) => s.serialize_i64(*v),
            Cell::Float(v) => s.serialize_f64(*v),
            Cell::Bool(v) => s.serialize_bool(*v),
            Cell::Text(v) => s.serialize_str(v),
            Cell::Empty => s.serialize_none(),
        }
    }
}

/// A table with a mandatory header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| CliError::Serialize(e.to_string());
        w.write_record(&self.columns).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv_field)).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::Serialize(e.to_string()))
    }
}

impl Serialize for Table {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        struct Rows<'a>(&'a [Vec<Cell>]);
        impl Serialize for Rows<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for r in self.0 {
                    seq.serialize_element(r)?;
                }
                seq.end()
            }
        }
        let mut st = s.serialize_struct("Table", 2)?;
        st.serialize_field("columns", &self.columns)?;
        st.serialize_field("rows", &Rows(&self.rows))?;
        st.end()
    }
}

/// What a subcommand produced: a JSON summary and the bulk table.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Value,
    pub table: Table,
}

/// Pretty JSON with floats at 17 significant digits.
struct FloatFormatter(PrettyFormatter<'static>);

impl Formatter for FloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(format_float(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FloatFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Serialize(e.to_string()))?;
    buf.push(b'\n');
    Ok(buf)
}

#[derive(serde::Serialize)]
struct Envelope<'a, P: Serialize> {
    artifact: &'a str,
    version: &'a str,
    subcommand: &'a str,
    config: &'a ExperimentConfig,
    wall_clock_seconds: Option<f64>,
    payload: P,
}

#[derive(serde::Serialize)]
struct FullPayload<'a> {
    summary: &'a Value,
    table: &'a Table,
}

/// Where the results of one invocation go.
pub struct Destination {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

/// Sidecar path for the JSON envelope of a CSV output.
pub fn envelope_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// JSON: the envelope with summary and table. CSV: the table, and when
/// writing to a file, the envelope with the summary next to it.
pub fn emit(
    dest: &Destination,
    subcommand: &str,
    config: &ExperimentConfig,
    wall_clock: Option<f64>,
    out: &RunOutput,
) -> Result<(), CliError> {
    let envelope = |payload| Envelope {
        artifact: ARTIFACT,
        version: VERSION,
        subcommand,
        config,
        wall_clock_seconds: wall_clock,
        payload,
    };
    match dest.format {
        OutputFormat::Json => {
            let full = FullPayload {
                summary: &out.summary,
                table: &out.table,
            };
            let full = serde_json::to_value(&full).map_err(|e| CliError::Serialize(e.to_string()))?;
            let bytes = to_json_bytes(&envelope(&full))?;
            match &dest.path {
                Some(p) => write_file(p, &bytes),
                None => io::stdout().write_all(&bytes).map_err(|source| CliError::Io {
                    path: "stdout".into(),
                    source,
                }),
            }
        }
        OutputFormat::Csv => {
            let mut csv = Vec::new();
            out.table.write_csv(&mut csv)?;
            match &dest.path {
                Some(p) => {
                    write_file(p, &csv)?;
                    write_file(&envelope_path(p), &to_json_bytes(&envelope(&out.summary))?)
                }
                None => io::stdout().write_all(&csv).map_err(|source| CliError::Io {
                    path: "stdout".into(),
                    source,
                }),
            }
        }
    }
}
