//! Output artifacts: CSV tables with one metadata comment line, JSON with
//! sorted keys, and a manifest of everything written. Also reads CSV inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL: &str = "optocool";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance recorded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Meta {
    pub fn new(command: &str, config_text: &str, seed: Option<u64>) -> Self {
        Meta {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
        }
    }

    fn comment(&self, extra: &[(&str, &str)]) -> String {
        let mut line = format!(
            "# tool={} version={} command={} config_sha256={}",
            self.tool, self.version, self.command, self.config_sha256
        );
        if let Some(seed) = self.seed {
            line.push_str(&format!(" seed={seed}"));
        }
        for (k, v) in extra {
            line.push_str(&format!(" {k}={v}"));
        }
        line.push('\n');
        line
    }
}

/// A CSV cell.
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

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map(Cell::Num).unwrap_or(Cell::Empty)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Num(v) if v.is_finite() => write!(f, "{v:e}"),
            Cell::Num(_) => write!(f, "nan"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

/// A table ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra `key=value` pairs for the comment line.
    pub notes: Vec<(String, String)>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, key: &str, value: impl ToString) -> Self {
        self.notes.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, meta: &Meta) -> Result<String> {
        let notes: Vec<(&str, &str)> = self
            .notes
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let mut out = meta.comment(&notes).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header).map_err(csv_err)?;
            for row in &self.rows {
                w.write_record(row.iter().map(|c| c.to_string()))
                    .map_err(csv_err)?;
            }
            w.flush()?;
        }
        String::from_utf8(out).map_err(|e| Error::Data(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

/// `{"meta": ..., "result": ...}` with keys sorted at every level.
pub fn to_json<T: Serialize>(meta: &Meta, result: &T) -> Result<String> {
    let value = serde_json::json!({ "meta": meta, "result": result });
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub meta: Meta,
    pub files: Vec<ManifestEntry>,
}

/// An output directory that records what is written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    meta: Meta,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            meta,
            files: Vec::new(),
        })
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.root.join(name), text)?;
        self.files.retain(|f| f.file != name);
        self.files.push(ManifestEntry {
            file: name.into(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len(),
        });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        let text = table.to_csv(&self.meta)?;
        self.write(name, &text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<()> {
        let text = to_json(&self.meta, result)?;
        self.write(name, &text)
    }

    /// Write `manifest.json` and return its path.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            meta: self.meta.clone(),
            files: self.files,
        };
        let value = serde_json::to_value(&manifest)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Numeric columns of a CSV file, keyed by header. `#` lines are comments.
/// Every column in `required` must be present.
pub fn read_columns(path: &Path, required: &[&str]) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    parse_columns(&text, required).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn parse_columns(text: &str, required: &[&str]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|r| !header.iter().any(|h| h == r))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "missing column(s) {}; expected {}",
            missing.join(", "),
            required.join(", ")
        )));
    }
    let mut columns: BTreeMap<String, Vec<f64>> =
        header.iter().map(|h| (h.clone(), Vec::new())).collect();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (name, field) in header.iter().zip(record.iter()) {
            let value = field.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "row {}: column {name}: `{field}` is not a number",
                    line + 1
                ))
            })?;
            columns.get_mut(name).expect("header column").push(value);
        }
    }
    if columns.values().next().is_none_or(|c| c.is_empty()) {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Meta {
        Meta::new("test", "a = 1", Some(7))
    }

    #[test]
    fn csv_has_one_comment_then_header() {
        let mut t = Table::new(&["x", "y", "ok"]).note("unit", "m^2/Hz");
        t.push(vec![1.5.into(), None.into(), true.into()]);
        let text = t.to_csv(&meta()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# tool=optocool"));
        assert!(lines[0].contains("seed=7") && lines[0].contains("unit=m^2/Hz"));
        assert_eq!(lines[1], "x,y,ok");
        assert_eq!(lines[2], "1.5e0,,true");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn round_trip_columns() {
        let mut t = Table::new(&["frequency_hz", "psd"]);
        for k in 0..5 {
            t.push(vec![
                (k as f64 * 0.1).into(),
                (1e-30 * (k + 1) as f64).into(),
            ]);
        }
        let cols = parse_columns(&t.to_csv(&meta()).unwrap(), &["frequency_hz", "psd"]).unwrap();
        assert_eq!(cols["psd"][4], 1e-30 * 5.0);
        assert_eq!(cols["frequency_hz"][3], 0.30000000000000004);
    }

    #[test]
    fn missing_column_named() {
        let err = parse_columns("a,b\n1,2\n", &["a", "c"]).unwrap_err();
        assert!(err.to_string().contains("c"));
        assert!(parse_columns("a\nx\n", &["a"]).is_err());
        assert!(parse_columns("a\n", &["a"]).is_err());
    }

    #[test]
    fn json_keys_sorted() {
        #[derive(Serialize)]
        struct R {
            zeta: f64,
            alpha: f64,
        }
        let text = to_json(
            &meta(),
            &R {
                zeta: 1.0,
                alpha: 2.0,
            },
        )
        .unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
        assert!(text.find("\"meta\"").unwrap() < text.find("\"result\"").unwrap());
    }

    #[test]
    fn manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), meta()).unwrap();
        out.json("b.json", &1.0).unwrap();
        out.csv("a.csv", &Table::new(&["x"])).unwrap();
        let path = out.finish().unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let files = m["files"].as_array().unwrap();
        assert_eq!(files[0]["file"], "a.csv");
        let a = fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(files[0]["sha256"], sha256_hex(&a));
        assert_eq!(m["config_sha256"], sha256_hex(b"a = 1"));
    }
}
