//! Line-oriented JSON result records with a fixed key order.
//!
//! Floats are written with 17 significant digits so every value reads back
//! to the identical double. Non-finite floats become `null`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const FORMAT: &str = "stns-results";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Floats(Vec<f64>),
    Strs(Vec<String>),
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}
impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}
impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}
impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x as i64)
    }
}
impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}
impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}
impl From<Vec<f64>> for Value {
    fn from(x: Vec<f64>) -> Self {
        Value::Floats(x)
    }
}
impl From<Vec<String>> for Value {
    fn from(x: Vec<String>) -> Self {
        Value::Strs(x)
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn render(v: &Value, out: &mut String) {
    match v {
        Value::Str(s) => out.push_str(&quote(s)),
        Value::Int(i) => write!(out, "{i}").unwrap(),
        Value::Float(x) => out.push_str(&format_float(*x)),
        Value::Bool(b) => write!(out, "{b}").unwrap(),
        Value::Floats(xs) => {
            let parts: Vec<String> = xs.iter().map(|x| format_float(*x)).collect();
            write!(out, "[{}]", parts.join(",")).unwrap();
        }
        Value::Strs(xs) => {
            let parts: Vec<String> = xs.iter().map(|s| quote(s)).collect();
            write!(out, "[{}]", parts.join(",")).unwrap();
        }
    }
}

/// One output line. Keys keep insertion order; the first is always `record`.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    fields: Vec<(String, Value)>,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        Self {
            fields: vec![("record".into(), kind.into())],
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.fields.push((key.into(), value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn to_line(&self) -> String {
        let mut out = String::from("{");
        for (i, (k, v)) in self.fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&quote(k));
            out.push(':');
            render(v, &mut out);
        }
        out.push('}');
        out
    }
}

/// The header is the only line carrying run-dependent values (timestamp and
/// wall time).
pub fn header(command: &str, config_hash: &str, wall_time_s: f64) -> Record {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    Record::new("header")
        .with("format", FORMAT)
        .with("version", FORMAT_VERSION as usize)
        .with("command", command)
        .with("config_hash", config_hash)
        .with("timestamp", timestamp)
        .with("wall_time_s", wall_time_s)
}

pub fn render_lines(header: &Record, body: &[Record]) -> String {
    let mut text = header.to_line();
    text.push('\n');
    for r in body {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    text
}

pub fn write_file(path: &Path, header: &Record, body: &[Record]) -> std::io::Result<()> {
    std::fs::write(path, render_lines(header, body))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, -0.0, f64::MIN_POSITIVE] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(f64::NAN), "null");
    }

    #[test]
    fn lines_are_valid_json_in_order() {
        let r = Record::new("x").with("b", 1.5).with("a", "q\"").with("v", vec![1.0, 2.0]);
        let line = r.to_line();
        assert!(line.starts_with("{\"record\":\"x\",\"b\":"));
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["a"], "q\"");
        assert_eq!(parsed["v"][1], 2.0);
    }
}
