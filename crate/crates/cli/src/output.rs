use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// `<prefix>.csv` and `<prefix>.jsonl`.
pub fn paths(prefix: &str) -> (PathBuf, PathBuf) {
    (PathBuf::from(format!("{prefix}.csv")), PathBuf::from(format!("{prefix}.jsonl")))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Writes the same rows as CSV (with header) and as JSON lines.
pub fn write_rows<T: Serialize>(prefix: &str, rows: &[T]) -> Result<(PathBuf, PathBuf)> {
    let (csv_path, jsonl_path) = paths(prefix);
    let mut csv = csv::Writer::from_writer(create(&csv_path)?);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    let mut jsonl = BufWriter::new(create(&jsonl_path)?);
    write_jsonl(&mut jsonl, rows)?;
    jsonl.flush()?;
    Ok((csv_path, jsonl_path))
}

pub fn write_jsonl<T: Serialize, W: Write>(out: &mut W, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
