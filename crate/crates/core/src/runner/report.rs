use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::RunnerError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    /// Floats are written with three decimals so reports are byte-stable.
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_finite() => format!("{v:.3}"),
            Cell::Float(_) => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!((v * 1000.0).round() / 1000.0),
            Cell::Text(s) => json!(s),
            Cell::Float(_) | Cell::Empty => Value::Null,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map(Cell::Float).unwrap_or(Cell::Empty)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows whose text cells equal the given `(column, value)` pairs.
    /// Floats compare by their rendered form, e.g. `"0.900"`.
    pub fn select(&self, filter: &[(&str, &str)]) -> Vec<&[Cell]> {
        let idx: Vec<(usize, &str)> =
            filter.iter().map(|(c, v)| (self.column(c).unwrap_or_else(|| panic!("no column {c}")), *v)).collect();
        self.rows.iter().filter(|row| idx.iter().all(|(i, v)| row[*i].render() == *v)).map(Vec::as_slice).collect()
    }

    fn to_csv(&self) -> Result<Vec<u8>, RunnerError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(|e| RunnerError::Io(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(|e| RunnerError::Io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| RunnerError::Io(e.to_string()))
    }

    fn to_json(&self) -> Vec<u8> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| Value::Object(self.columns.iter().cloned().zip(row.iter().map(Cell::to_json)).collect()))
            .collect();
        let mut out = serde_json::to_vec_pretty(&rows).expect("table serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub tables: Vec<Table>,
    pub provenance: Provenance,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Serialize)]
struct ManifestTable<'a> {
    name: &'a str,
    file: String,
    columns: &'a [String],
    rows: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
    tables: Vec<ManifestTable<'a>>,
}

fn io(e: impl std::fmt::Display) -> RunnerError {
    RunnerError::Io(e.to_string())
}

/// Writes one file per table, `<scenario>__<table>.<ext>`, plus
/// `<scenario>__manifest.json`. Files are staged in a scratch directory and
/// moved into place only once every file is complete.
pub fn export_report(report: &Report, dir: &Path, format: Format) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(dir).map_err(io)?;
    let stage = tempfile::Builder::new().prefix(".gladsim-stage").tempdir_in(dir).map_err(io)?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut listed = Vec::new();
    for t in &report.tables {
        let file = format!("{}__{}.{}", report.scenario, t.name, format.extension());
        let bytes = match format {
            Format::Csv => t.to_csv()?,
            Format::Json => t.to_json(),
        };
        listed.push(ManifestTable { name: &t.name, file: file.clone(), columns: &t.columns, rows: t.rows.len() });
        files.push((file, bytes));
    }
    let manifest = Manifest { scenario: &report.scenario, provenance: &report.provenance, tables: listed };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(io)?;
    bytes.push(b'\n');
    files.push((format!("{}__manifest.json", report.scenario), bytes));

    for (name, bytes) in &files {
        fs::write(stage.path().join(name), bytes).map_err(io)?;
    }
    let mut placed = Vec::with_capacity(files.len());
    for (name, _) in &files {
        let target = dir.join(name);
        if let Err(e) = fs::rename(stage.path().join(name), &target) {
            for p in &placed {
                let _ = fs::remove_file(p);
            }
            return Err(io(e));
        }
        placed.push(target);
    }
    Ok(placed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provenance() -> Provenance {
        Provenance { config_hash: "ab".into(), seeds: vec![1, 2], version: "0.1.0".into() }
    }

    fn two_tables() -> Report {
        let mut a = Table::new("alpha", &["x", "y"]);
        a.push(vec![Cell::from(1usize), Cell::from(0.12345)]);
        a.push(vec![Cell::from(2usize), Cell::Empty]);
        let mut b = Table::new("beta", &["label"]);
        b.push(vec![Cell::from("ok")]);
        Report { scenario: "demo".into(), tables: vec![a, b], provenance: provenance() }
    }

    fn listing(dir: &Path) -> Vec<String> {
        let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        v.sort();
        v
    }

    #[test]
    fn empty_report_is_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = Report { scenario: "empty".into(), tables: vec![], provenance: provenance() };
        export_report(&r, dir.path(), Format::Csv).unwrap();
        assert_eq!(listing(dir.path()), vec!["empty__manifest.json"]);
    }

    #[test]
    fn tables_are_named_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&two_tables(), dir.path(), Format::Csv).unwrap();
        assert_eq!(listing(dir.path()), vec!["demo__alpha.csv", "demo__beta.csv", "demo__manifest.json"]);
        let first: Vec<Vec<u8>> = listing(dir.path()).iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
        assert_eq!(first[0], b"x,y\n1,0.123\n2,\n");
        export_report(&two_tables(), dir.path(), Format::Csv).unwrap();
        let second: Vec<Vec<u8>> = listing(dir.path()).iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
        assert_eq!(first, second);
        let manifest: Value = serde_json::from_slice(&first[2]).unwrap();
        assert_eq!(manifest["config_hash"], "ab");
        assert_eq!(manifest["tables"][1]["file"], "demo__beta.csv");
    }

    #[test]
    fn json_tables() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&two_tables(), dir.path(), Format::Json).unwrap();
        let v: Value = serde_json::from_slice(&fs::read(dir.path().join("demo__alpha.json")).unwrap()).unwrap();
        assert_eq!(v[0]["y"], 0.123);
        assert_eq!(v[1]["y"], Value::Null);
    }

    #[test]
    #[should_panic]
    fn ragged_rows_rejected() {
        Table::new("t", &["a", "b"]).push(vec![Cell::Empty]);
    }
}
