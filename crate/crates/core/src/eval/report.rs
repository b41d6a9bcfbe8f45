use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const EXPLANATION_COLUMNS: [&str; 8] = [
    "path",
    "teacher",
    "student",
    "divergence",
    "nll",
    "rouge1",
    "rouge2",
    "rougeL",
];
pub const CLASSIFICATION_COLUMNS: [&str; 6] = [
    "backbone",
    "structure",
    "pooling",
    "interaction",
    "accuracy",
    "weighted_f1",
];

/// Rows of named metrics sharing one column set.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    columns: Vec<String>,
    rows: Vec<Map<String, Value>>,
}

impl Report {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Result<Self> {
        let columns: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
        if columns.is_empty() {
            return Err(Error::InvalidInput(
                "report needs at least one column".into(),
            ));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(Error::InvalidInput(format!("duplicate report column {c}")));
            }
        }
        Ok(Self {
            columns,
            rows: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Map<String, Value>] {
        &self.rows
    }

    /// Adds a row; its keys must be exactly the report columns. The stored
    /// row is reordered to column order.
    pub fn push(&mut self, mut row: Map<String, Value>) -> Result<()> {
        if row.len() != self.columns.len() || self.columns.iter().any(|c| !row.contains_key(c)) {
            let keys: Vec<&String> = row.keys().collect();
            return Err(Error::InvalidInput(format!(
                "row keys {keys:?} do not match columns {:?}",
                self.columns
            )));
        }
        let ordered = self
            .columns
            .iter()
            .map(|c| (c.clone(), row.remove(c).expect("checked")))
            .collect();
        self.rows.push(ordered);
        Ok(())
    }

    /// Builds a row from `(column, value)` pairs and pushes it.
    pub fn push_values<I, K, V>(&mut self, values: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Value>,
    {
        self.push(
            values
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    /// Column of numbers, `None` where a cell is not numeric.
    pub fn numbers(&self, column: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.get(column).and_then(Value::as_f64))
            .collect()
    }

    /// Aligned plain-text table; numbers are printed with 4 decimals.
    pub fn to_table(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.values().map(cell).collect())
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cells
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([c.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |items: &[String]| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.columns);
        for r in &cells {
            out.push_str(&line(r));
        }
        out
    }

    /// One JSON object per line, keys in column order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("json values serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl<S: AsRef<str>>(columns: &[S], text: &str) -> Result<Self> {
        let mut report = Self::new(columns)?;
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let row: Map<String, Value> = serde_json::from_str(line)
                .map_err(|e| Error::parse("report", format!("line {}: {e}", i + 1)))?;
            report.push(row)?;
        }
        Ok(report)
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Writes `<stem>.txt` (table) and `<stem>.jsonl` (machine-readable) next
/// to each other and returns both paths.
pub fn emit_report(report: &Report, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let table = stem.with_extension("txt");
    let machine = stem.with_extension("jsonl");
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
    fs::write(&machine, report.to_jsonl()).map_err(|e| Error::io(&machine, e))?;
    Ok((table, machine))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new(&["path", "nll"]).unwrap();
        r.push_values([
            ("nll", Value::from(0.123456789)),
            ("path", Value::from("4L->1L")),
        ])
        .unwrap();
        r.push_values([
            ("path", Value::from("4L->2L->1L")),
            ("nll", Value::from(1.5)),
        ])
        .unwrap();
        r
    }

    #[test]
    fn table_is_aligned() {
        let t = sample().to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "path        nll");
        assert_eq!(lines[1], "4L->1L      0.1235");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn jsonl_round_trip() {
        let r = sample();
        let back = Report::from_jsonl(&["path", "nll"], &r.to_jsonl()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.numbers("nll"), vec![Some(0.123456789), Some(1.5)]);
    }

    #[test]
    fn rejects_mismatched_rows() {
        let mut r = Report::new(&["a", "b"]).unwrap();
        assert!(r.push_values([("a", 1)]).is_err());
        assert!(r.push_values([("a", 1), ("c", 2)]).is_err());
        assert!(Report::new(&["a", "a"]).is_err());
    }

    #[test]
    fn emit_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (t1, m1) = emit_report(&sample(), &dir.path().join("one")).unwrap();
        let (t2, m2) = emit_report(&sample(), &dir.path().join("two")).unwrap();
        assert_eq!(fs::read(t1).unwrap(), fs::read(t2).unwrap());
        assert_eq!(fs::read(m1).unwrap(), fs::read(m2).unwrap());
    }
}
