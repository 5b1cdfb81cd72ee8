//! Metric tables, invariant verdicts and their serialization.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

/// One cell of a metric table. Reals print with the shortest representation
/// that round-trips, so equal values always serialize to equal bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
    Empty,
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
            Value::Empty => Ok(()),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Empty, Into::into)
    }
}

/// Semicolon-joined coordinates, for points inside a single CSV cell.
pub fn coords(x: &[f64]) -> Value {
    Value::Text(x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub tol: f64,
    pub version: &'static str,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub model: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub invariants: Vec<Invariant>,
    pub provenance: Provenance,
}

impl Report {
    pub fn new(command: &str, model: &str, columns: &[&str], seed: u64, tol: f64) -> Self {
        Self {
            command: command.into(),
            model: model.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            invariants: Vec::new(),
            provenance: Provenance { seed, tol, version: env!("CARGO_PKG_VERSION"), wall_time_s: 0.0 },
        }
    }

    /// Panics if the row width differs from the header; that is a harness bug.
    pub fn row(&mut self, cells: Vec<Value>) {
        assert_eq!(cells.len(), self.columns.len(), "row width for {}-{}", self.command, self.model);
        self.rows.push(cells);
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant { name: name.into(), pass, detail: detail.into() });
    }

    /// Records a failed invariant for a computation that could not complete.
    pub fn error(&mut self, name: &str, err: impl fmt::Display) {
        self.check(name, false, format!("error: {err}"));
    }

    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }

    pub fn invariant(&self, name: &str) -> Option<&Invariant> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}.csv", self.command, self.model)
    }

    /// The metric table as RFC-4180 CSV. Wall time is deliberately absent.
    pub fn csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    fn events(&self, csv_path: &Path) -> Vec<serde_json::Value> {
        let mut out: Vec<_> = self
            .invariants
            .iter()
            .map(|i| {
                json!({
                    "event": "invariant",
                    "command": self.command,
                    "model": self.model,
                    "name": i.name,
                    "pass": i.pass,
                    "detail": i.detail,
                })
            })
            .collect();
        out.push(json!({
            "event": "report",
            "command": self.command,
            "model": self.model,
            "passed": self.passed(),
            "rows": self.rows.len(),
            "csv": csv_path.display().to_string(),
            "seed": self.provenance.seed,
            "tol": self.provenance.tol,
            "version": self.provenance.version,
            "wall_time_s": self.provenance.wall_time_s,
        }));
        out
    }

    pub fn summary(&self) -> String {
        let failed: Vec<&str> = self.invariants.iter().filter(|i| !i.pass).map(|i| i.name.as_str()).collect();
        if failed.is_empty() {
            format!("[PASS] {} {} ({} invariants)", self.command, self.model, self.invariants.len())
        } else {
            format!("[FAIL] {} {}: {}", self.command, self.model, failed.join(", "))
        }
    }
}

/// Writes every table and one `events.jsonl` into `out`, after all
/// computation has finished. Returns the files written.
pub fn write_reports(out: &Path, reports: &[Report]) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(reports.len() + 1);
    let mut events = Vec::new();
    for r in reports {
        let path = out.join(r.file_name());
        fs::write(&path, r.csv_bytes())?;
        events.extend(r.events(&path));
        written.push(path);
    }
    events.push(json!({
        "event": "run",
        "reports": reports.len(),
        "passed": reports.iter().all(Report::passed),
    }));
    let path = out.join("events.jsonl");
    let mut f = io::BufWriter::new(fs::File::create(&path)?);
    for e in &events {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_formats() {
        let mut r = Report::new("degree", "cubic", &["name", "value", "flag", "gap"], 1, 1e-9);
        r.row(vec!["a,b".into(), 0.1.into(), true.into(), Value::Empty]);
        r.row(vec!["plain".into(), (-3i64).into(), false.into(), coords(&[1.0, -0.5])]);
        let s = String::from_utf8(r.csv_bytes()).unwrap();
        assert_eq!(s, "name,value,flag,gap\n\"a,b\",0.1,true,\nplain,-3,false,1;-0.5\n");
    }

    #[test]
    fn events_are_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::new("cones", "x", &["k"], 1, 1e-9);
        r.row(vec![1i64.into()]);
        r.check("ok", true, "");
        r.check("bad", false, "why");
        let files = write_reports(dir.path(), &[r]).unwrap();
        assert_eq!(files.len(), 2);
        let text = fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1]["pass"], false);
        assert_eq!(lines[2]["passed"], false);
        assert_eq!(lines[3]["event"], "run");
    }
}
