//! CSV formatting and atomic file writes.

use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Rounds to 9 significant digits and prints the shortest decimal form of the
/// rounded value.
pub fn csv_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so a failed command never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// Writes to `path` or, without one, to standard output.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, contents.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// `trace.csv` becomes `trace_events.csv` for suffix `events` and extension
/// `csv`.
pub fn sibling(path: &Path, suffix: &str, ext: &str) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}
