//! Tab-separated artifact files with a provenance comment header.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!("stancemap ", env!("CARGO_PKG_VERSION"));

/// Recorded as the first line of every artifact the pipeline writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn header_line(&self) -> String {
        format!("# {TOOL_VERSION} config={} seed={}", self.config_hash, self.seed)
    }

    /// Parses a header line written by [`Provenance::header_line`].
    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# ")?.strip_prefix(TOOL_VERSION)?;
        let mut hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            if let Some(h) = field.strip_prefix("config=") {
                hash = Some(h.to_string());
            } else if let Some(s) = field.strip_prefix("seed=") {
                seed = s.parse().ok();
            }
        }
        Some(Self {
            config_hash: hash?,
            seed: seed?,
        })
    }

    /// Provenance of an existing artifact, if it has a readable header.
    pub fn of_file(path: &Path) -> Option<Self> {
        let mut line = String::new();
        BufReader::new(fs::File::open(path).ok()?).read_line(&mut line).ok()?;
        Self::parse(line.trim_end())
    }
}

/// In-memory table written as TSV: header comment, column names, rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, provenance: Option<&Provenance>) -> String {
        let mut out = String::new();
        if let Some(p) = provenance {
            out.push_str(&p.header_line());
            out.push('\n');
        }
        let _ = writeln!(out, "{}", self.columns.join("\t"));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join("\t"));
        }
        out
    }

    pub fn write(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        write_file(path, &self.render(provenance))
    }

    /// Reads a TSV file, skipping `#` comment lines. The first remaining
    /// line holds the column names.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).ok_or_else(|| Error::InvalidInput(format!("{}: empty table", path.display())))
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let columns = lines.next()?.split('\t').map(String::from).collect();
        let rows = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
        Some(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Fixed-precision float formatting used in every artifact.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}
