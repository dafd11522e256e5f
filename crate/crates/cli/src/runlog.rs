use chrono::{SecondsFormat, Utc};
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

/// Timestamped plain-text log kept next to the report. Everything that varies
/// between identical runs (times, latencies) goes here, not into reports.
pub struct RunLog {
    file: File,
}

impl RunLog {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self {
            file: File::create(path)?,
        })
    }

    pub fn line(&mut self, message: impl AsRef<str>) {
        let ts = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
        for l in message.as_ref().lines() {
            if let Err(e) = writeln!(self.file, "[{ts}] {l}") {
                tracing::warn!("run log write failed: {e}");
            }
        }
    }
}
