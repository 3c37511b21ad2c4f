//! Day-long closed-loop simulation: per-second power flow with noisy
//! measurements, recursive sensitivity estimation and a robust PV dispatch
//! every control period, with a full trace of everything that happened.

pub mod clock;
pub mod config;
pub mod noise;
pub mod profiles;
pub mod report;
pub mod runlog;
pub mod scenario;
pub mod sim;
pub mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use clock::{Clock, FakeClock, MonotonicClock};
pub use config::{ConfigError, ScenarioConfig};
pub use profiles::{DayProfiles, ProfileError};
pub use runlog::RunLog;
pub use scenario::Scenario;
pub use sim::{no_control_baseline, run_day, RunOptions};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Includes gaps in the profiles.
    #[error(transparent)]
    Profile(#[from] ProfileError),
    /// The partial log covers every second before `t`.
    #[error("power flow diverged at t={t}: {message}")]
    PowerFlowDiverged { t: u64, message: String, partial: Box<RunLog> },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("telemetry: {0}")]
    Telemetry(String),
    #[error("run log: {0}")]
    Log(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
