//! Artifact writing. Every file is written to a temporary sibling and then
//! renamed, so an interrupted run never leaves a partial CSV behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Schema version written in the first line of every CSV.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// CSV table with a `# darkcycle <kind> v1` comment line ahead of the header.
pub struct Table {
    kind: String,
    notes: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, header: &[&str]) -> Self {
        Self { kind: kind.into(), notes: vec![], header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    /// Extra `# ...` line after the version line.
    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = row.into_iter().map(|x| x.to_string()).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "# darkcycle {} v{}", self.kind, CSV_SCHEMA_VERSION)?;
        for n in &self.notes {
            writeln!(buf, "# {n}")?;
        }
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

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Shortest round-trip form; NaN and infinities spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x}")
    }
}

pub struct OutDir {
    pub root: PathBuf,
    pub plots: bool,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn new(root: PathBuf, plots: bool) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root, plots, written: vec![] })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        let p = self.path(name);
        t.write(&p)?;
        self.written.push(p);
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        self.written.push(p);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let mut t = Table::new("demo", &["a", "b"]).note("units: none");
        t.push([num(1.5), num(f64::NAN)]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(s, "# darkcycle demo v1\n# units: none\na,b\n1.5,nan\n");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = std::env::temp_dir().join(format!("darkcycle-out-{}", std::process::id()));
        let p = dir.join("x.csv");
        write_atomic(&p, b"hi").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"hi");
        assert!(!dir.join(".x.csv.tmp").exists());
        fs::remove_dir_all(dir).unwrap();
    }
}
