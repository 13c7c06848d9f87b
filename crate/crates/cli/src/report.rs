//! CSV and JSON output, written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::run::Results;

pub const CSV_HEADER: &str = "experiment_id,quantity,index,value,stderr";

pub fn csv_text(results: &Results) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in &results.rows {
        s.push_str(&format!(
            "{},{},{},{:?},{:?}\n",
            r.experiment_id, r.quantity, r.index, r.value, r.stderr
        ));
    }
    s
}

/// Writes `<experiment>.csv` and `<experiment>.json` under `dir`, creating it.
pub fn emit_report(results: &Results, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut json = serde_json::to_string_pretty(&results.summary)?;
    json.push('\n');
    let mut paths = Vec::new();
    for (ext, body) in [("csv", csv_text(results)), ("json", json)] {
        let path = dir.join(format!("{}.{ext}", results.experiment));
        write_atomic(&path, body.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("report");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        anyhow::Error::new(e).context(format!("cannot write {}", path.display()))
    })
}
