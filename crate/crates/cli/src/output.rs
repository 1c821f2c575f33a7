//! Artifact emission: atomic writes, the seed/version header line, and the
//! resolved-config echo.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Every CSV begins with a comment line carrying the resolved master seed
/// and the artifact version.
pub fn csv_header(seed: u64) -> String {
    format!("# widthlab v{ARTIFACT_VERSION} master_seed={seed}\n")
}

/// Emit a CSV artifact with the standard header line.
pub fn write_csv(path: &Path, seed: u64, header_cols: &str, rows: &[String]) -> std::io::Result<()> {
    let mut out = csv_header(seed);
    out.push_str(header_cols);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Echo the resolved configuration next to the outputs for provenance.
pub fn write_resolved_config(dir: &Path, config: &RunConfig) -> std::io::Result<PathBuf> {
    let path = dir.join("resolved_config.json");
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    write_atomic(&path, &json)?;
    Ok(path)
}

/// Deterministic float formatting for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.12e}")
    }
}
