//! Watch-folder automation: detect new scans, segment them, publish the
//! result to the renderer catalog, and report each job transition.

pub mod job;
pub mod ledger;
pub mod notify;
pub mod watch;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use livervis_core::crf::CrfParams;
use livervis_core::roi::DEFAULT_CROP_MARGIN;
use livervis_core::volume::{DEFAULT_CLIP_HI, DEFAULT_CLIP_LO};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use job::now_rfc3339;
use ledger::Ledger;
use notify::{Notifier, SinkConfig};
use watch::{DirSource, FsSource, NewVolume, Watcher};

#[derive(Debug, Error)]
pub enum WatchError {
    #[error("invalid watch config: {0}")]
    Config(String),
    #[error("input directory {0} is not readable: {1}")]
    InputUnreadable(String, std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Segmenter {
    Kmeans {
        k: usize,
    },
    ImportProbThenCrf {
        #[serde(default)]
        params: CrfParams,
    },
}

fn default_poll() -> f64 {
    2.0
}
fn default_stability() -> u32 {
    2
}
fn default_workers() -> usize {
    1
}
fn default_clip() -> [f64; 2] {
    [DEFAULT_CLIP_LO, DEFAULT_CLIP_HI]
}
fn default_margin() -> usize {
    DEFAULT_CROP_MARGIN
}
fn default_notify() -> Vec<SinkConfig> {
    vec![SinkConfig::Console]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatchConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub catalog_dir: PathBuf,
    #[serde(default = "default_poll")]
    pub poll_interval_s: f64,
    #[serde(default = "default_stability")]
    pub stability_polls: u32,
    pub segmenter: Segmenter,
    /// Defaults to `<output_dir>/ledger.jsonl`.
    #[serde(default)]
    pub ledger: Option<PathBuf>,
    #[serde(default = "default_notify")]
    pub notify: Vec<SinkConfig>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// HU range mapped to [0, 1] before segmentation and to 0..255 for the renderer.
    #[serde(default = "default_clip")]
    pub clip: [f64; 2],
    #[serde(default = "default_margin")]
    pub crop_margin: usize,
}

impl WatchConfig {
    pub fn new(input_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, catalog_dir: impl Into<PathBuf>, segmenter: Segmenter) -> Self {
        Self {
            input_dir: input_dir.into(),
            output_dir: output_dir.into(),
            catalog_dir: catalog_dir.into(),
            poll_interval_s: default_poll(),
            stability_polls: default_stability(),
            segmenter,
            ledger: None,
            notify: default_notify(),
            workers: default_workers(),
            clip: default_clip(),
            crop_margin: default_margin(),
        }
    }

    pub fn validate(&self) -> Result<(), WatchError> {
        let bad = |m: String| Err(WatchError::Config(m));
        let dirs = [&self.input_dir, &self.output_dir, &self.catalog_dir];
        for i in 0..3 {
            for j in i + 1..3 {
                if dirs[i] == dirs[j] {
                    return bad(format!("directories must be distinct, {} repeats", dirs[i].display()));
                }
            }
        }
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return bad(format!("poll_interval_s must be positive, got {}", self.poll_interval_s));
        }
        if self.stability_polls == 0 {
            return bad("stability_polls must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.clip[0].is_finite() && self.clip[1].is_finite() && self.clip[0] < self.clip[1]) {
            return bad(format!("clip range {:?} is empty", self.clip));
        }
        match &self.segmenter {
            Segmenter::Kmeans { k } if *k < 3 => bad(format!("kmeans needs k >= 3 to leave a non-extreme cluster, got {k}")),
            Segmenter::ImportProbThenCrf { params } => params.validate().map_err(|e| WatchError::Config(e.to_string())),
            _ => Ok(()),
        }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.ledger.clone().unwrap_or_else(|| self.output_dir.join("ledger.jsonl"))
    }

    pub fn from_json(text: &str) -> Result<Self, WatchError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WatchError> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input_dir, &mut cfg.output_dir, &mut cfg.catalog_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(l) = cfg.ledger.as_mut().filter(|l| l.is_relative()) {
            *l = base.join(&*l);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }

    pub fn can_advance_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done) | (JobState::Running, JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: JobState,
    /// RFC 3339, UTC.
    pub at: String,
}

#[derive(Debug, Error)]
#[error("job {job_id}: {from:?} cannot move to {to:?}")]
pub struct TransitionError {
    pub job_id: String,
    pub from: JobState,
    pub to: JobState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub source: String,
    pub state: JobState,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_id: Option<String>,
}

impl JobRecord {
    pub fn queued(job_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            job_id: job_id.into(),
            source: source.into(),
            state: JobState::Queued,
            transitions: vec![Transition { state: JobState::Queued, at: now_rfc3339() }],
            reason: None,
            artifacts: Vec::new(),
            volume_id: None,
        }
    }

    pub fn advance(&mut self, to: JobState) -> Result<(), TransitionError> {
        if !self.state.can_advance_to(to) {
            return Err(TransitionError { job_id: self.job_id.clone(), from: self.state, to });
        }
        self.state = to;
        self.transitions.push(Transition { state: to, at: now_rfc3339() });
        Ok(())
    }
}

/// Notifications are delivered on their own thread so a slow sink never
/// holds up a job.
struct NotifyQueue {
    tx: Option<mpsc::Sender<JobRecord>>,
    thread: Option<JoinHandle<()>>,
}

impl NotifyQueue {
    fn spawn(notifier: Notifier) -> Self {
        let (tx, rx) = mpsc::channel::<JobRecord>();
        let thread = std::thread::spawn(move || {
            for record in rx {
                notifier.notify(&record);
            }
        });
        Self { tx: Some(tx), thread: Some(thread) }
    }

    fn send(&self, record: &JobRecord) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(record.clone());
        }
    }

    fn close(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for NotifyQueue {
    fn drop(&mut self) {
        self.close();
    }
}

pub struct Orchestrator {
    cfg: WatchConfig,
    source: Arc<dyn DirSource>,
    watcher: Watcher,
    ledger: Ledger,
    catalog: Mutex<Catalog>,
    notify: NotifyQueue,
    queue: VecDeque<(NewVolume, JobRecord)>,
}

impl Orchestrator {
    /// Fails if the config is invalid or the input directory cannot be listed.
    pub fn new(cfg: WatchConfig, source: Arc<dyn DirSource>, notifier: Notifier) -> Result<Self, WatchError> {
        cfg.validate()?;
        source.list().map_err(|e| WatchError::InputUnreadable(cfg.input_dir.display().to_string(), e))?;
        std::fs::create_dir_all(&cfg.output_dir)?;
        std::fs::create_dir_all(&cfg.catalog_dir)?;
        let ledger = Ledger::open(cfg.ledger_path())?;
        Ok(Self {
            watcher: Watcher::new(cfg.stability_polls),
            catalog: Mutex::new(Catalog::new(&cfg.catalog_dir)),
            notify: NotifyQueue::spawn(notifier),
            queue: VecDeque::new(),
            ledger,
            source,
            cfg,
        })
    }

    /// Watches `cfg.input_dir` on disk with the configured sinks.
    pub fn from_config(cfg: WatchConfig) -> Result<Self, WatchError> {
        let source = Arc::new(FsSource::new(&cfg.input_dir));
        let notifier = Notifier::from_config(&cfg.notify);
        Self::new(cfg, source, notifier)
    }

    pub fn config(&self) -> &WatchConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn catalog(&self) -> Catalog {
        self.catalog.lock().unwrap().clone()
    }

    /// One directory poll. Every stable new file is written to the ledger
    /// and queued; the queued records are returned in detection order.
    pub fn poll(&mut self) -> std::io::Result<Vec<JobRecord>> {
        let listing = self.source.list()?;
        let ledger = &self.ledger;
        let events = self.watcher.observe(&listing, |f| ledger.contains(f));
        let mut queued = Vec::with_capacity(events.len());
        for ev in events {
            let entry = self.ledger.record(&ev.file)?;
            let record = JobRecord::queued(entry.job_id, self.source.describe(&ev.file.name));
            self.notify.send(&record);
            queued.push(record.clone());
            self.queue.push_back((ev, record));
        }
        Ok(queued)
    }

    fn execute(&self, ev: &NewVolume, mut record: JobRecord) -> JobRecord {
        record.advance(JobState::Running).expect("queued jobs start");
        self.notify.send(&record);
        match job::run_job(&ev.file.name, &record.job_id, &self.cfg, self.source.as_ref(), &self.catalog) {
            Ok(out) => {
                record.artifacts = out.paths();
                record.volume_id = Some(out.entry.volume_id);
                record.advance(JobState::Done).expect("running jobs finish");
            }
            Err(e) => {
                tracing::warn!("{} failed: {}", record.job_id, e.reason());
                record.reason = Some(e.reason());
                record.advance(JobState::Failed).expect("running jobs finish");
            }
        }
        self.notify.send(&record);
        record
    }

    /// Runs everything queued on up to `workers` threads. Results come back in queue order.
    pub fn run_queued(&mut self) -> Vec<JobRecord> {
        let jobs: Vec<_> = self.queue.drain(..).collect();
        if jobs.is_empty() {
            return Vec::new();
        }
        let workers = self.cfg.workers.min(jobs.len());
        if workers == 1 {
            return jobs.into_iter().map(|(ev, r)| self.execute(&ev, r)).collect();
        }
        let n = jobs.len();
        let work = Mutex::new(jobs.into_iter().enumerate().collect::<VecDeque<_>>());
        let results = Mutex::new(vec![None; n]);
        let this = &*self;
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let Some((i, (ev, r))) = work.lock().unwrap().pop_front() else { break };
                    let done = this.execute(&ev, r);
                    results.lock().unwrap()[i] = Some(done);
                });
            }
        });
        results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
    }

    /// Poll, then run whatever became ready.
    pub fn tick(&mut self) -> std::io::Result<Vec<JobRecord>> {
        self.poll()?;
        Ok(self.run_queued())
    }

    /// Polls every `poll_interval_s` until `stop` is set. Listing failures
    /// after startup are logged and retried on the next poll.
    pub fn run(&mut self, stop: &AtomicBool) {
        let interval = Duration::from_secs_f64(self.cfg.poll_interval_s);
        while !stop.load(Ordering::Relaxed) {
            if let Err(e) = self.tick() {
                tracing::warn!("polling {} failed: {e}", self.cfg.input_dir.display());
            }
            let mut left = interval;
            while !left.is_zero() && !stop.load(Ordering::Relaxed) {
                let step = left.min(Duration::from_millis(100));
                std::thread::sleep(step);
                left -= step;
            }
        }
    }

    /// Waits for queued notifications to be delivered.
    pub fn close(mut self) {
        self.notify.close();
    }
}
