//! In-memory output set, committed to disk only once everything is computed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clockprobe::dynamics::CSV_SCHEMA_LINE;
use clockprobe::SimRecord;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// A CSV table with a versioned schema comment line.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut buf = format!("{CSV_SCHEMA_LINE}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    /// Column by name, parsed as numbers; blanks and non-numbers become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }
}

/// Shortest round-trip formatting keeps outputs byte-stable.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.add_bytes(name, table.to_bytes()?);
        Ok(())
    }

    pub fn add_text(&mut self, name: &str, text: String) {
        self.add_bytes(name, text.into_bytes());
    }

    pub fn add_record(&mut self, name: &str, record: &SimRecord) -> Result<(), CliError> {
        let mut buf = Vec::new();
        record.write_csv(&mut buf)?;
        self.add_bytes(name, buf);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file to a temporary in `dir`, then renames them all into
    /// place. A failure before the renames leaves `dir` untouched.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::from(e).context(&dir.display().to_string()))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| CliError::from(e.error).context(&path.display().to_string()))?;
            written.push(path);
        }
        Ok(written)
    }
}
