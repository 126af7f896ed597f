use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("max_peers must be at least 1")]
    MaxPeers,
    #[error("target_fps {0} outside [1, 120]")]
    TargetFps(f64),
    #[error("heartbeat_timeout_s must be positive, got {0}")]
    HeartbeatTimeout(f64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Socket addresses the server binds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenConfig {
    /// Newline-delimited JSON signaling.
    pub signaling: String,
    /// Direct peer streams (frames and the data channel).
    pub stream: String,
}

impl Default for ListenConfig {
    fn default() -> Self {
        Self { signaling: "127.0.0.1:7400".into(), stream: "127.0.0.1:7401".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub max_peers: usize,
    pub target_fps: f64,
    pub heartbeat_timeout_s: f64,
    pub listen: ListenConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { max_peers: 2, target_fps: 18.0, heartbeat_timeout_s: 10.0, listen: ListenConfig::default() }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_peers < 1 {
            return Err(ConfigError::MaxPeers);
        }
        if !(1.0..=120.0).contains(&self.target_fps) {
            return Err(ConfigError::TargetFps(self.target_fps));
        }
        if !(self.heartbeat_timeout_s.is_finite() && self.heartbeat_timeout_s > 0.0) {
            return Err(ConfigError::HeartbeatTimeout(self.heartbeat_timeout_s));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn heartbeat_timeout_ms(&self) -> u64 {
        (self.heartbeat_timeout_s * 1000.0).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let cfg = ServerConfig::from_json(r#"{"max_peers": 4}"#).unwrap();
        assert_eq!(cfg.max_peers, 4);
        assert_eq!(cfg.target_fps, 18.0);
        assert_eq!(cfg.heartbeat_timeout_s, 10.0);
        assert!(ServerConfig::from_json(r#"{"max_peers": 0}"#).is_err());
        assert!(ServerConfig::from_json(r#"{"target_fps": 240}"#).is_err());
    }
}
