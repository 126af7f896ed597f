//! Directory polling with size-stability gating.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};

/// One directory listing entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStat {
    pub name: String,
    pub size: u64,
    /// Nanoseconds since the Unix epoch.
    pub mtime: u64,
}

/// Where scans arrive. Implemented over a real directory by [`FsSource`] and
/// by scripted fakes in tests.
pub trait DirSource: Send + Sync {
    /// Candidate scans (`*.nii`), in any order.
    fn list(&self) -> io::Result<Vec<FileStat>>;
    /// Reads any file in the directory, including probability siblings.
    fn read(&self, name: &str) -> io::Result<Vec<u8>>;
    /// Human-readable location of `name`, used in job records.
    fn describe(&self, name: &str) -> String;
}

pub struct FsSource {
    dir: PathBuf,
}

impl FsSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl DirSource for FsSource {
    fn list(&self) -> io::Result<Vec<FileStat>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.ends_with(".nii") || name.starts_with('.') {
                continue;
            }
            let Ok(meta) = entry.metadata() else { continue };
            if !meta.is_file() {
                continue;
            }
            let mtime = meta
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos() as u64);
            out.push(FileStat { name, size: meta.len(), mtime });
        }
        Ok(out)
    }

    fn read(&self, name: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir.join(name))
    }

    fn describe(&self, name: &str) -> String {
        self.dir.join(name).display().to_string()
    }
}

/// A file that has stopped changing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewVolume {
    pub file: FileStat,
    /// Poll number at which the file was first seen in its final state.
    pub detected_at_poll: u64,
}

#[derive(Debug, Clone)]
struct Candidate {
    size: u64,
    mtime: u64,
    /// Consecutive polls that observed this size and mtime.
    seen: u32,
    first_seen: u64,
}

/// Tracks files across polls. A file fires once it has been observed with the
/// same size and mtime on `stability_polls` consecutive polls.
#[derive(Debug, Clone)]
pub struct Watcher {
    stability_polls: u32,
    polls: u64,
    candidates: BTreeMap<String, Candidate>,
}

impl Watcher {
    pub fn new(stability_polls: u32) -> Self {
        Self { stability_polls: stability_polls.max(1), polls: 0, candidates: BTreeMap::new() }
    }

    /// Feeds one listing. `done` reports files already processed (by name,
    /// size and mtime); those never fire. Events come out in detection order.
    pub fn observe(&mut self, listing: &[FileStat], done: impl Fn(&FileStat) -> bool) -> Vec<NewVolume> {
        self.polls += 1;
        let poll = self.polls;
        let present: std::collections::HashSet<&str> = listing.iter().map(|f| f.name.as_str()).collect();
        self.candidates.retain(|name, _| present.contains(name.as_str()));

        let mut ready = Vec::new();
        for f in listing {
            if done(f) {
                self.candidates.remove(&f.name);
                continue;
            }
            let c = self
                .candidates
                .entry(f.name.clone())
                .or_insert(Candidate { size: f.size, mtime: f.mtime, seen: 0, first_seen: poll });
            if c.size != f.size || c.mtime != f.mtime {
                *c = Candidate { size: f.size, mtime: f.mtime, seen: 0, first_seen: poll };
            }
            c.seen += 1;
            if c.seen >= self.stability_polls {
                ready.push(NewVolume { file: f.clone(), detected_at_poll: c.first_seen });
            }
        }
        for r in &ready {
            self.candidates.remove(&r.file.name);
        }
        ready.sort_by(|a, b| a.detected_at_poll.cmp(&b.detected_at_poll).then_with(|| a.file.name.cmp(&b.file.name)));
        ready
    }

    pub fn polls(&self) -> u64 {
        self.polls
    }
}
