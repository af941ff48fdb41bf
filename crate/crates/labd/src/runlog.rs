//! Append-only JSON-lines run log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log is read-only after a failed write: {0}")]
    ReadOnly(String),
    #[error("run log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub iso8601_utc: String,
    pub kind: String,
    pub position: [f64; 3],
    pub seed: u64,
    pub payload_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

/// Fields of an entry before the log assigns `seq` and the timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub kind: String,
    pub position: [f64; 3],
    pub seed: u64,
    pub payload_path: Option<String>,
    pub scenario: Option<String>,
}

pub struct RunLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
    fsync: bool,
    read_only: Option<String>,
}

impl RunLog {
    /// Opens or creates the log. A truncated final line is cut off so the
    /// next append starts on a clean line and continues the sequence.
    pub fn open(path: &Path, fsync: bool) -> Result<Self, RunLogError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let (entries, good_len) = scan(&file)?;
        if good_len < file.metadata()?.len() {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        let next_seq = entries.last().map_or(1, |e| e.seq + 1);
        Ok(Self { path: path.into(), file, next_seq, fsync, read_only: None })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn read_only(&self) -> Option<&str> {
        self.read_only.as_deref()
    }

    pub fn append(&mut self, entry: NewEntry) -> Result<LogEntry, RunLogError> {
        if let Some(reason) = &self.read_only {
            return Err(RunLogError::ReadOnly(reason.clone()));
        }
        let e = LogEntry {
            seq: self.next_seq,
            iso8601_utc: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            kind: entry.kind,
            position: entry.position,
            seed: entry.seed,
            payload_path: entry.payload_path,
            scenario: entry.scenario,
        };
        let mut line = serde_json::to_string(&e).map_err(std::io::Error::other)?;
        line.push('\n');
        let written = self.file.write_all(line.as_bytes()).and_then(|_| if self.fsync { self.file.sync_data() } else { Ok(()) });
        if let Err(err) = written {
            self.read_only = Some(err.to_string());
            return Err(RunLogError::Io(err));
        }
        self.next_seq += 1;
        Ok(e)
    }

    /// Puts the log in read-only mode, as after a failed write.
    pub fn poison(&mut self, reason: &str) {
        self.read_only = Some(reason.into());
    }

    pub fn entries(&self) -> Result<Vec<LogEntry>, RunLogError> {
        read_entries(&self.path)
    }
}

/// All complete entries of a log file; a torn final line is ignored.
pub fn read_entries(path: &Path) -> Result<Vec<LogEntry>, RunLogError> {
    match File::open(path) {
        Ok(f) => Ok(scan(&f)?.0),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

fn scan(file: &File) -> Result<(Vec<LogEntry>, u64), RunLogError> {
    let mut reader = BufReader::new(file.try_clone()?);
    reader.seek(SeekFrom::Start(0))?;
    let mut entries: Vec<LogEntry> = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<LogEntry>(buf.trim_end()) {
            Ok(e) if complete => {
                if let Some(last) = entries.last() {
                    if e.seq != last.seq + 1 {
                        return Err(RunLogError::Corrupt {
                            line: line_no,
                            message: format!("seq {} after {}", e.seq, last.seq),
                        });
                    }
                }
                entries.push(e);
                good_len += n as u64;
            }
            // an unterminated final line is a torn write
            _ if !complete => break,
            Ok(_) => unreachable!(),
            Err(err) => {
                let rest_empty = reader.fill_buf()?.is_empty();
                if rest_empty {
                    break;
                }
                return Err(RunLogError::Corrupt { line: line_no, message: err.to_string() });
            }
        }
    }
    Ok((entries, good_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(kind: &str) -> NewEntry {
        NewEntry { kind: kind.into(), position: [0.0, 0.0, -200.0], seed: 7, payload_path: None, scenario: None }
    }

    #[test]
    fn appends_are_consecutive() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLog::open(&dir.path().join("runs.jsonl"), false).unwrap();
        let a = log.append(entry("move_stage")).unwrap();
        let b = log.append(entry("spectroscopy")).unwrap();
        assert_eq!(b.seq, a.seq + 1);
        assert!(a.iso8601_utc.ends_with('Z'));
        assert_eq!(log.entries().unwrap().len(), 2);
    }

    #[test]
    fn torn_final_line_is_dropped_and_seq_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        {
            let mut log = RunLog::open(&path, true).unwrap();
            for _ in 0..3 {
                log.append(entry("rabi")).unwrap();
            }
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":4,\"iso8601_utc\":\"2026").unwrap();
        drop(f);
        let mut log = RunLog::open(&path, false).unwrap();
        assert_eq!(log.next_seq(), 4);
        assert_eq!(log.append(entry("rabi")).unwrap().seq, 4);
        let all = log.entries().unwrap();
        assert_eq!(all.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(RunLog::open(&path, false), Err(RunLogError::Corrupt { .. })));
    }

    #[test]
    fn poisoned_log_refuses_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = RunLog::open(&dir.path().join("runs.jsonl"), false).unwrap();
        log.poison("disk full");
        assert!(matches!(log.append(entry("x")), Err(RunLogError::ReadOnly(_))));
        assert_eq!(log.read_only(), Some("disk full"));
    }
}
