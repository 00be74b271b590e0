use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Writes the command name, crate version and full argument set, plus any
/// command-specific details, as pretty JSON.
pub fn write_run_json<T: Serialize>(path: &Path, command: &str, args: &T, details: Value) -> Result<()> {
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    });
    if let (Value::Object(map), Value::Object(extra)) = (&mut doc, details) {
        map.extend(extra);
    }
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `<file>.run.json` next to a file output.
pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}

/// CSV writer that leaves the header to the caller, so empty tables still
/// get one.
pub fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("writing {}", path.display()))
}
