//! Append-only JSONL telemetry: one serialized record per line, readable
//! while a run is still in progress.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub struct TelemetryWriter {
    out: BufWriter<File>,
}

impl TelemetryWriter {
    /// Create or truncate the file at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(TelemetryWriter { out: BufWriter::new(file) })
    }

    /// Open for appending, keeping existing records.
    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(TelemetryWriter { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &impl Serialize) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid(format!("telemetry record: {e}")))?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::invalid(format!("telemetry write: {e}")))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::invalid(format!("telemetry flush: {e}")))
    }
}

impl Drop for TelemetryWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Read every record of a JSONL file into memory.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file =
        File::open(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        k: usize,
        v: f64,
    }

    #[test]
    fn lines_round_trip_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut w = TelemetryWriter::create(&path).unwrap();
        for k in 0..5 {
            w.write(&Rec { k, v: k as f64 * 0.5 }).unwrap();
        }
        w.flush().unwrap();
        let recs: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[3], Rec { k: 3, v: 1.5 });
    }

    #[test]
    fn append_mode_extends_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        TelemetryWriter::create(&path).unwrap().write(&Rec { k: 0, v: 0.0 }).unwrap();
        TelemetryWriter::append_to(&path).unwrap().write(&Rec { k: 1, v: 1.0 }).unwrap();
        let recs: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].k, 1);
    }

    #[test]
    fn malformed_lines_name_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"k\":0,\"v\":0.0}\nnot json\n").unwrap();
        let err = read_jsonl::<Rec>(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
