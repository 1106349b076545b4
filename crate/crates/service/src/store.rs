//! Append-only annotation log. Each line is the record's JSON, a tab and
//! the CRC-32 of that JSON in hex. On open, a final line cut short by a
//! crash is dropped; any other damage makes the store refuse to load.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("annotation store {path}: line {line} is malformed: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("annotation store {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("timestamp {given} is not after the previous annotation of `{artifact}` by `{reviewer}` ({last})")]
    NotMonotone {
        artifact: String,
        reviewer: String,
        given: DateTime<Utc>,
        last: DateTime<Utc>,
    },
}

/// One reviewer decision on one artifact in one output space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub artifact_id: String,
    pub taxonomy_name: String,
    pub accepted: BTreeSet<String>,
    pub rejected: BTreeSet<String>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
}

fn encode(record: &AnnotationRecord) -> String {
    let json = serde_json::to_string(record).expect("serializable");
    let crc = crc32fast::hash(json.as_bytes());
    format!("{json}\t{crc:08x}\n")
}

fn decode(line: &str) -> Result<AnnotationRecord, String> {
    let (json, crc) = line.rsplit_once('\t').ok_or("missing checksum")?;
    let expected = u32::from_str_radix(crc, 16).map_err(|_| "bad checksum field")?;
    if crc.len() != 8 || crc32fast::hash(json.as_bytes()) != expected {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    records: Vec<AnnotationRecord>,
    last: BTreeMap<(String, String), DateTime<Utc>>,
}

impl AnnotationStore {
    /// Opens or creates the log, recovering from a torn final write.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |e: std::io::Error| StoreError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };
        let mut records = Vec::new();
        let mut good_len = 0usize;
        let mut rest = &bytes[..];
        let mut line_no = 0;
        while !rest.is_empty() {
            line_no += 1;
            let (line, terminated) = match rest.iter().position(|&b| b == b'\n') {
                Some(i) => (&rest[..i], true),
                None => (rest, false),
            };
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(decode);
            match parsed {
                Ok(r) => records.push(r),
                // A partial last line is what a crash mid-append leaves.
                Err(_) if !terminated => break,
                Err(reason) => {
                    return Err(StoreError::Malformed {
                        path: path.display().to_string(),
                        line: line_no,
                        reason,
                    })
                }
            }
            good_len += line.len() + usize::from(terminated);
            rest = &rest[(line.len() + usize::from(terminated)).min(rest.len())..];
            if !terminated {
                break;
            }
        }

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .and_then(|f| f.set_len(good_len as u64))
            .map_err(io)?;
        let mut file = OpenOptions::new().append(true).open(path).map_err(io)?;
        if good_len > 0 && bytes[good_len - 1] != b'\n' {
            file.write_all(b"\n").map_err(io)?;
        }
        file.sync_data().map_err(io)?;

        let mut last = BTreeMap::new();
        for r in &records {
            last.insert((r.artifact_id.clone(), r.reviewer.clone()), r.timestamp);
        }
        Ok(Self {
            path: path.to_owned(),
            file,
            records,
            last,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Records in append order.
    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    /// Latest timestamp of an (artifact, reviewer) stream.
    pub fn last_timestamp(&self, artifact: &str, reviewer: &str) -> Option<DateTime<Utc>> {
        self.last
            .get(&(artifact.to_owned(), reviewer.to_owned()))
            .copied()
    }

    /// `now`, nudged past the stream's last timestamp if the clock has not
    /// moved on.
    pub fn next_timestamp(&self, artifact: &str, reviewer: &str, now: DateTime<Utc>) -> DateTime<Utc> {
        match self.last_timestamp(artifact, reviewer) {
            Some(last) if now <= last => last + Duration::microseconds(1),
            _ => now,
        }
    }

    /// Appends and syncs one record.
    pub fn append(&mut self, record: AnnotationRecord) -> Result<(), StoreError> {
        if let Some(last) = self.last_timestamp(&record.artifact_id, &record.reviewer) {
            if record.timestamp <= last {
                return Err(StoreError::NotMonotone {
                    artifact: record.artifact_id,
                    reviewer: record.reviewer,
                    given: record.timestamp,
                    last,
                });
            }
        }
        let io = |e: std::io::Error| StoreError::Io {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        };
        self.file.write_all(encode(&record).as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.last.insert(
            (record.artifact_id.clone(), record.reviewer.clone()),
            record.timestamp,
        );
        self.records.push(record);
        Ok(())
    }

    /// Latest record per (artifact, taxonomy, reviewer).
    pub fn effective(&self) -> BTreeMap<(String, String, String), &AnnotationRecord> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.insert(
                (r.artifact_id.clone(), r.taxonomy_name.clone(), r.reviewer.clone()),
                r,
            );
        }
        out
    }
}
