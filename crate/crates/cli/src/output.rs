//! Result tables and their CSV/JSON serialization.
//!
//! CSV output gets a sidecar `<file>.envelope.json` holding the config echo
//! and run metadata; JSON output embeds the same envelope.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v.into())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Kebab-case name of a unit enum variant, via its serde form.
pub fn tag<T: Serialize>(value: &T) -> Cell {
    match serde_json::to_value(value) {
        Ok(Value::String(s)) => Cell::Text(s),
        Ok(other) => Cell::Text(other.to_string()),
        Err(e) => Cell::Text(e.to_string()),
    }
}

/// Scientific notation with 17 significant digits, which round-trips every
/// `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_number(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            // Non-finite values have no JSON number form.
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(v) => json!(format_number(*v)),
            Cell::Int(v) => json!(v),
            Cell::Bool(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| e.to_string())?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(|e| e.to_string())?;
        }
        let bytes = w.into_inner().map_err(|e| e.to_string())?;
        String::from_utf8(bytes).map_err(|e| e.to_string())
    }

    pub fn to_json_records(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> =
                        self.header.iter().zip(row).map(|(h, c)| (h.to_string(), c.json())).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Run metadata written next to (or into) every result.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub kind: String,
    /// Parsed config with keys in canonical order.
    pub config: Value,
    /// Config file exactly as read.
    pub config_text: String,
    pub threads: usize,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    pub records: usize,
    pub failed: usize,
    pub summary: Value,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".envelope.json");
    out.with_file_name(name)
}

/// Writes `table` to `out` in `format`, plus the envelope. Returns every
/// path written.
pub fn write_result(out: &Path, format: Format, table: &Table, envelope: &Envelope) -> Result<Vec<PathBuf>, String> {
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
    };
    let env = serde_json::to_value(envelope).map_err(|e| e.to_string())?;
    match format {
        Format::Csv => {
            write(out, table.to_csv()?)?;
            let side = sidecar_path(out);
            write(&side, pretty(&env)?)?;
            Ok(vec![out.to_path_buf(), side])
        }
        Format::Json => {
            let doc = json!({ "envelope": env, "records": table.to_json_records() });
            write(out, pretty(&doc)?)?;
            Ok(vec![out.to_path_buf()])
        }
    }
}

fn pretty(v: &Value) -> Result<String, String> {
    serde_json::to_string_pretty(v).map(|mut s| {
        s.push('\n');
        s
    })
    .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_through_csv_text() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 2f64.sqrt()] {
            let text = format_number(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
            let digits = text.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
            assert_eq!(digits, 17);
        }
        assert_eq!(format_number(f64::NAN), "NaN");
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn csv_and_json_carry_the_same_values() {
        let mut t = Table::new(&["a", "b", "c", "d"]);
        t.push(vec![Cell::Num(0.1), 3usize.into(), "x, y".into(), Cell::Empty]);
        t.push(vec![Cell::Num(-1e-20), 0usize.into(), true.into(), Cell::Num(2.0)]);
        let csv_text = t.to_csv().unwrap();
        let json = t.to_json_records();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        for (rec, obj) in reader.records().zip(json.as_array().unwrap()) {
            let rec = rec.unwrap();
            for (i, h) in t.header.iter().enumerate() {
                let j = &obj[*h];
                match j {
                    Value::Number(n) => assert_eq!(rec[i].parse::<f64>().unwrap(), n.as_f64().unwrap()),
                    Value::String(s) => assert_eq!(&rec[i], s),
                    Value::Bool(b) => assert_eq!(rec[i].parse::<bool>().unwrap(), *b),
                    Value::Null => assert_eq!(&rec[i], ""),
                    other => panic!("{other}"),
                }
            }
        }
    }

    #[test]
    fn sidecar_sits_next_to_the_output() {
        assert_eq!(sidecar_path(Path::new("out/run.csv")), PathBuf::from("out/run.csv.envelope.json"));
    }
}
