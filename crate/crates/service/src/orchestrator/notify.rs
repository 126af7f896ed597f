//! Job transition notifications.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::JobRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sink", rename_all = "snake_case")]
pub enum SinkConfig {
    Console,
    Webhook {
        url: String,
        #[serde(default = "default_webhook_timeout")]
        timeout_s: f64,
    },
}

fn default_webhook_timeout() -> f64 {
    5.0
}

pub trait Sink: Send + Sync {
    fn name(&self) -> String;
    fn deliver(&self, record: &JobRecord) -> Result<(), String>;
}

/// One line per transition, e.g. `job-000003 done /in/case.nii`.
pub struct ConsoleSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl ConsoleSink {
    pub fn stdout() -> Self {
        Self::to_writer(Box::new(std::io::stdout()))
    }

    pub fn to_writer(out: Box<dyn Write + Send>) -> Self {
        Self { out: Mutex::new(out) }
    }
}

pub fn console_line(record: &JobRecord) -> String {
    let mut line = format!("{} {} {}", record.job_id, record.state.as_str(), record.source);
    if let Some(r) = &record.reason {
        line.push_str(&format!(" ({r})"));
    }
    line
}

impl Sink for ConsoleSink {
    fn name(&self) -> String {
        "console".into()
    }

    fn deliver(&self, record: &JobRecord) -> Result<(), String> {
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{}", console_line(record)).and_then(|_| out.flush()).map_err(|e| e.to_string())
    }
}

/// POSTs the job record as JSON.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent }
    }
}

impl Sink for WebhookSink {
    fn name(&self) -> String {
        format!("webhook {}", self.url)
    }

    fn deliver(&self, record: &JobRecord) -> Result<(), String> {
        self.agent.post(&self.url).send_json(record).map(|_| ()).map_err(|e| e.to_string())
    }
}

/// Builds the sink described by `cfg`.
pub fn sink_from_config(cfg: &SinkConfig) -> Arc<dyn Sink> {
    match cfg {
        SinkConfig::Console => Arc::new(ConsoleSink::stdout()),
        SinkConfig::Webhook { url, timeout_s } => Arc::new(WebhookSink::new(url.clone(), Duration::from_secs_f64(timeout_s.max(0.001)))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub sink: String,
    pub attempts: u32,
    pub ok: bool,
}

#[derive(Clone, Default)]
pub struct Notifier {
    sinks: Vec<Arc<dyn Sink>>,
}

impl Notifier {
    pub fn new(sinks: Vec<Arc<dyn Sink>>) -> Self {
        Self { sinks }
    }

    pub fn from_config(cfg: &[SinkConfig]) -> Self {
        Self::new(cfg.iter().map(sink_from_config).collect())
    }

    /// Sends `record` to every sink. Each failure is retried once and then
    /// logged; nothing is propagated.
    pub fn notify(&self, record: &JobRecord) -> Vec<Delivery> {
        self.sinks
            .iter()
            .map(|s| {
                let mut attempts = 0;
                let mut last = Err(String::new());
                while attempts < 2 {
                    attempts += 1;
                    last = s.deliver(record);
                    if last.is_ok() {
                        break;
                    }
                }
                if let Err(e) = &last {
                    tracing::warn!("notification of {} via {} failed twice: {e}", record.job_id, s.name());
                }
                Delivery { sink: s.name(), attempts, ok: last.is_ok() }
            })
            .collect()
    }
}
