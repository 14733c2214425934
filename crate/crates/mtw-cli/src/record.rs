//! Line-delimited run records.
//!
//! Layout: `record <command>`, `version`, `digest`, the resolved config,
//! then command-specific body lines, then `timing_ms` as the very last
//! line. Two runs with the same resolved config and seed produce identical
//! records except for that final line.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::config::Settings;

pub struct Record {
    kind: &'static str,
    body: Vec<String>,
    started: Instant,
}

impl Record {
    pub fn new(kind: &'static str) -> Self {
        Record {
            kind,
            body: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn line(&mut self, line: String) {
        self.body.push(line);
    }

    /// Render, print to stdout, and append to the optional record file.
    pub fn emit(self, settings: &Settings, path: Option<&Path>) -> Result<(), String> {
        let mut lines = Vec::with_capacity(self.body.len() + 8);
        lines.push(format!("record {}", self.kind));
        lines.push(format!("version {}", env!("CARGO_PKG_VERSION")));
        lines.push(format!("digest {}", settings.digest()));
        lines.extend(settings.header_lines());
        lines.extend(self.body);
        lines.push(format!("timing_ms {}", self.started.elapsed().as_millis()));
        let text = lines.join("\n");
        println!("{text}");
        if let Some(path) = path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| format!("cannot open record file {}: {e}", path.display()))?;
            writeln!(f, "{text}")
                .map_err(|e| format!("cannot write record file {}: {e}", path.display()))?;
        }
        Ok(())
    }
}

/// Write CSV rows to `path` when given; otherwise embed them in the record
/// as `data` lines so every run stays self-contained.
pub fn sink_csv(
    record: &mut Record,
    path: Option<&Path>,
    header: &str,
    rows: &[String],
) -> Result<(), String> {
    match path {
        Some(path) => {
            let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
            text.push_str(header);
            text.push('\n');
            for row in rows {
                text.push_str(row);
                text.push('\n');
            }
            std::fs::write(path, text)
                .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            record.line(format!("out path={} rows={}", path.display(), rows.len()));
        }
        None => {
            record.line(format!("data {header}"));
            for row in rows {
                record.line(format!("data {row}"));
            }
        }
    }
    Ok(())
}
