use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};

use super::atomic_write;
use crate::error::Result;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A report table written as CSV plus a JSON-lines mirror.
///
/// The CSV starts with a `#` comment line carrying the toolkit version and
/// the config digest, then the column header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Renders a real so that parsing it back gives the same bits.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

impl CsvTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn escape(field: &str) -> String {
        if field.contains([',', '"', '\n']) {
            format!("\"{}\"", field.replace('"', "\"\""))
        } else {
            field.to_string()
        }
    }

    pub fn to_csv(&self, digest: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# ardm {TOOLKIT_VERSION} config_digest={digest}");
        let header: Vec<String> = self.columns.iter().map(|c| Self::escape(c)).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|c| Self::escape(c)).collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    /// One JSON object per row; numeric-looking fields become numbers.
    pub fn to_jsonl(&self, digest: &str) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let mut obj = Map::new();
            obj.insert("config_digest".into(), Value::String(digest.to_string()));
            for (k, v) in self.columns.iter().zip(row) {
                let value = match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null),
                    Ok(_) => Value::Null,
                    Err(_) => Value::String(v.clone()),
                };
                obj.insert(k.clone(), value);
            }
            out.push_str(&Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.jsonl` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str, digest: &str) -> Result<()> {
        atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv(digest).as_bytes())?;
        atomic_write(&dir.join(format!("{stem}.jsonl")), self.to_jsonl(digest).as_bytes())
    }

    /// Parses a CSV written by [`CsvTable::to_csv`] (comment line skipped).
    pub fn parse_csv(text: &str) -> Option<CsvTable> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let columns = split_csv_line(lines.next()?);
        let rows = lines.filter(|l| !l.is_empty()).map(split_csv_line).collect();
        Some(CsvTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_digest_line_and_round_trips() {
        let mut t = CsvTable::new(["id", "note", "value"]);
        t.push(vec!["a".into(), "x,y".into(), fmt_real(0.1)]);
        t.push(vec!["b".into(), "say \"hi\"".into(), fmt_real(-2.5e-7)]);
        let csv = t.to_csv("d1g3st");
        assert!(csv.lines().next().unwrap().contains("config_digest=d1g3st"));
        assert_eq!(CsvTable::parse_csv(&csv).unwrap(), t);
        let jsonl = t.to_jsonl("d1g3st");
        let first: Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert_eq!(first["value"], Value::from(0.1));
        assert_eq!(first["note"], Value::from("x,y"));
    }

    #[test]
    fn reals_round_trip_bitwise() {
        for v in [0.1, 1.0 / 3.0, -1e-300, 123456.789] {
            assert_eq!(fmt_real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
