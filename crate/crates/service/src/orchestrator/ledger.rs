//! Append-only record of processed files, one JSON object per line.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::watch::FileStat;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub size: u64,
    pub mtime: u64,
    pub job_id: String,
}

pub struct Ledger {
    path: PathBuf,
    keys: HashSet<(String, u64, u64)>,
    next_job: u64,
    /// The file ends without a newline; the next append starts a fresh line.
    torn: bool,
}

fn job_number(id: &str) -> Option<u64> {
    id.strip_prefix("job-")?.parse().ok()
}

impl Ledger {
    /// Loads `path`, creating nothing until the first append. Lines that do
    /// not parse (a torn final write) are skipped with a warning.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut ledger = Self { path, keys: HashSet::new(), next_job: 1, torn: false };
        let text = match fs::read_to_string(&ledger.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ledger),
            Err(e) => return Err(e),
        };
        ledger.torn = !text.is_empty() && !text.ends_with('\n');
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LedgerEntry>(line) {
                Ok(e) => ledger.remember(&e),
                Err(err) => tracing::warn!("{}:{}: skipping ledger line: {err}", ledger.path.display(), n + 1),
            }
        }
        Ok(ledger)
    }

    fn remember(&mut self, e: &LedgerEntry) {
        if let Some(n) = job_number(&e.job_id) {
            self.next_job = self.next_job.max(n + 1);
        }
        self.keys.insert((e.name.clone(), e.size, e.mtime));
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, f: &FileStat) -> bool {
        self.keys.contains(&(f.name.clone(), f.size, f.mtime))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Assigns the next job id to `f` and persists the entry before returning.
    pub fn record(&mut self, f: &FileStat) -> io::Result<LedgerEntry> {
        let entry = LedgerEntry { name: f.name.clone(), size: f.size, mtime: f.mtime, job_id: format!("job-{:06}", self.next_job) };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = if self.torn { String::from("\n") } else { String::new() };
        line.push_str(&serde_json::to_string(&entry).expect("entries serialize"));
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        self.torn = false;
        self.remember(&entry);
        Ok(entry)
    }

    pub fn entries(&self) -> io::Result<Vec<LedgerEntry>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let f = FileStat { name: "a.nii".into(), size: 5, mtime: 9 };
        let mut l = Ledger::open(&path).unwrap();
        assert_eq!(l.record(&f).unwrap().job_id, "job-000001");
        fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"name\":").unwrap();
        let mut l = Ledger::open(&path).unwrap();
        assert!(l.contains(&f));
        assert!(!l.contains(&FileStat { size: 6, ..f.clone() }));
        let g = FileStat { name: "b.nii".into(), size: 1, mtime: 1 };
        assert_eq!(l.record(&g).unwrap().job_id, "job-000002");
        assert!(Ledger::open(&path).unwrap().contains(&g));
    }
}
