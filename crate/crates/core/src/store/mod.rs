//! Dataset persistence, configuration, SFT export, and pipeline
//! orchestration.
//!
//! Every dataset is JSONL: one canonical record per line, UTF-8,
//! newline-terminated. Writes go to a temp file and are renamed into place,
//! so a crash mid-write never leaves a truncated dataset behind.

mod config;
mod export;
mod manifest;
mod pipeline;

pub use config::{BackendConfig, BackendKind, PipelineConfig, SimulatorConfig, SimulatorKind};
pub use export::{export_sft, SftRecord, SftSource};
pub use manifest::{Manifest, StageEntry};
pub use pipeline::{run_pipeline, RejectRecord, Stage, StageOutcome};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::model::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad record at {path}:{line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("checksum mismatch for {path}: manifest has {expected}, file has {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("config error: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a JSONL file into typed records.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Err(StoreError::MissingInput(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Serialize records as canonical JSONL and atomically replace `path`.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let mut body = String::new();
    for record in records {
        body.push_str(&crate::model::canonical_json(record));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

/// Atomically replace `path` with `bytes` via a temp file in the same
/// directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(path))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    {
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: u32,
        name: String,
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recs.jsonl");
        let records = vec![
            Rec { id: 1, name: "a".into() },
            Rec { id: 2, name: "b".into() },
        ];
        write_jsonl_atomic(&path, &records).unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
        // No temp files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn missing_input_is_structured() {
        let err = read_jsonl::<Rec>(Path::new("/nonexistent/file.jsonl")).unwrap_err();
        assert!(matches!(err, StoreError::MissingInput(_)));
    }

    #[test]
    fn bad_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recs.jsonl");
        std::fs::write(&path, "{\"id\":1,\"name\":\"a\"}\nnot json\n").unwrap();
        let err = read_jsonl::<Rec>(&path).unwrap_err();
        match err {
            StoreError::BadRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rewrites_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recs.jsonl");
        let records = vec![Rec { id: 7, name: "x".into() }];
        write_jsonl_atomic(&path, &records).unwrap();
        let first = file_checksum(&path).unwrap();
        write_jsonl_atomic(&path, &records).unwrap();
        assert_eq!(first, file_checksum(&path).unwrap());
    }

    #[test]
    fn interrupted_write_leaves_target_intact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recs.jsonl");
        let records = vec![Rec { id: 1, name: "original".into() }];
        write_jsonl_atomic(&path, &records).unwrap();
        let before = file_checksum(&path).unwrap();

        // A crash mid-write leaves only a stale temp file behind; the target
        // is untouched and still parses.
        let stale = dir
            .path()
            .join(format!(".recs.jsonl.tmp-{}", std::process::id()));
        std::fs::write(&stale, b"{\"id\":2,\"nam").unwrap();
        assert_eq!(file_checksum(&path).unwrap(), before);
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);

        // The next successful write replaces both.
        let updated = vec![Rec { id: 3, name: "updated".into() }];
        write_jsonl_atomic(&path, &updated).unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, updated);
    }
}
