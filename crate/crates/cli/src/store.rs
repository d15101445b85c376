//! Append-only JSON-lines logs, one file per session.
//!
//! Every append is a single write of whole lines followed by fsync. A crash
//! can leave at most one torn line at the end of a file; recovery drops it
//! and keeps everything before it.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::session::{Event, Session};

#[derive(Debug, Clone)]
pub struct Store {
    dir: Option<PathBuf>,
}

/// Sessions recovered from a store directory.
#[derive(Debug, Default)]
pub struct Recovery {
    pub sessions: Vec<(Session, Vec<Event>)>,
    /// Files whose torn final record was cut off.
    pub truncated: Vec<PathBuf>,
    /// Files that could not be replayed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Store {
    /// A store that keeps nothing on disk.
    pub fn memory() -> Self {
        Self { dir: None }
    }

    pub fn open(dir: impl Into<PathBuf>) -> io::Result<(Self, Recovery)> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        let mut rec = Recovery::default();
        for p in paths {
            match read_log(&p) {
                Ok((events, cut)) => {
                    if cut {
                        log::warn!("{}: dropped a torn trailing record", p.display());
                        rec.truncated.push(p.clone());
                    }
                    match Session::replay(&events) {
                        Ok(s) => rec.sessions.push((s, events)),
                        Err(e) => {
                            log::warn!("{}: cannot replay: {e}", p.display());
                            rec.skipped.push((p, e.to_string()));
                        }
                    }
                }
                Err(e) => {
                    log::warn!("{}: unreadable: {e}", p.display());
                    rec.skipped.push((p, e.to_string()));
                }
            }
        }
        Ok((Self { dir: Some(dir) }, rec))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    /// Start a new log; fails if one exists for `id`.
    pub fn create(&self, id: &str, created: &Event) -> io::Result<()> {
        let Some(p) = self.path(id) else { return Ok(()) };
        let f = OpenOptions::new().write(true).create_new(true).open(&p)?;
        write_events(f, std::slice::from_ref(created))
    }

    pub fn append(&self, id: &str, events: &[Event]) -> io::Result<()> {
        let Some(p) = self.path(id) else { return Ok(()) };
        if events.is_empty() {
            return Ok(());
        }
        let f = OpenOptions::new().append(true).open(&p)?;
        write_events(f, events)
    }

    pub fn delete(&self, id: &str) -> io::Result<()> {
        match self.path(id) {
            Some(p) => std::fs::remove_file(p),
            None => Ok(()),
        }
    }
}

fn write_events(mut f: File, events: &[Event]) -> io::Result<()> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    f.sync_data()
}

/// Parse a log. A bad or unterminated final line is cut from the file;
/// a bad line elsewhere is an error.
pub fn read_log(path: &Path) -> io::Result<(Vec<Event>, bool)> {
    let bytes = std::fs::read(path)?;
    let mut events = Vec::new();
    let mut good_end = 0;
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map(|i| pos + i);
        let line = &bytes[pos..end.unwrap_or(bytes.len())];
        let parsed = serde_json::from_slice::<Event>(line);
        match (parsed, end) {
            (Ok(e), Some(end)) => {
                events.push(e);
                pos = end + 1;
                good_end = pos;
            }
            (res, end) => {
                let last = end.map_or(true, |e| e + 1 == bytes.len());
                if !last {
                    let msg = res.err().map_or("missing newline".to_string(), |e| e.to_string());
                    return Err(io::Error::new(io::ErrorKind::InvalidData, format!("corrupt record at byte {pos}: {msg}")));
                }
                OpenOptions::new().write(true).open(path)?.set_len(good_end as u64)?;
                return Ok((events, true));
            }
        }
    }
    Ok((events, false))
}
