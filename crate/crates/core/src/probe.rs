//! System condition sampling.
//!
//! A [`ConditionVector`] captures CPU utilisation, the number of live
//! processes and the wall-clock time. Providers abstract where the vector
//! comes from so tests and simulations can inject fixed values.

use std::collections::VecDeque;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

/// Drift saturates at the ceiling of the drift input domain.
pub const MAX_DRIFT_SECS: f64 = 10.0;

/// Window over which the live provider measures CPU utilisation.
pub const DEFAULT_CPU_WINDOW: Duration = Duration::from_millis(100);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("live metric `{metric}` unavailable: {reason}")]
    Unavailable { metric: &'static str, reason: String },
    #[error("scripted condition sequence exhausted")]
    Exhausted,
    #[error("invalid condition vector: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionVector {
    /// Utilisation across all cores, 0–100.
    pub cpu_percent: f64,
    pub process_count: u32,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl ConditionVector {
    pub fn new(cpu_percent: f64, process_count: u32, timestamp: f64) -> Result<Self, ProbeError> {
        if !(0.0..=100.0).contains(&cpu_percent) {
            return Err(ProbeError::Invalid(format!("cpu_percent {cpu_percent} outside [0, 100]")));
        }
        if !(timestamp.is_finite() && timestamp > 0.0) {
            return Err(ProbeError::Invalid(format!("timestamp {timestamp} must be positive")));
        }
        Ok(Self { cpu_percent, process_count, timestamp })
    }
}

/// Absolute clock difference in seconds, saturated at [`MAX_DRIFT_SECS`].
pub fn drift(t_enc: f64, t_now: f64) -> f64 {
    let d = (t_now - t_enc).abs();
    if d.is_nan() {
        MAX_DRIFT_SECS
    } else {
        d.min(MAX_DRIFT_SECS)
    }
}

#[derive(Debug, Clone)]
pub enum ConditionProvider {
    /// Reads the host: CPU over `cpu_window`, process table, wall clock.
    Live {
        cpu_window: Duration,
    },
    Fixed(ConditionVector),
    /// Each sample consumes the next vector.
    Scripted(VecDeque<ConditionVector>),
}

impl ConditionProvider {
    pub fn live() -> Self {
        ConditionProvider::Live { cpu_window: DEFAULT_CPU_WINDOW }
    }

    pub fn fixed(cv: ConditionVector) -> Self {
        ConditionProvider::Fixed(cv)
    }

    pub fn scripted(seq: impl IntoIterator<Item = ConditionVector>) -> Result<Self, ProbeError> {
        let seq: VecDeque<_> = seq.into_iter().collect();
        if seq.is_empty() {
            return Err(ProbeError::Invalid("scripted sequence is empty".into()));
        }
        Ok(ConditionProvider::Scripted(seq))
    }

    pub fn sample(&mut self) -> Result<ConditionVector, ProbeError> {
        match self {
            ConditionProvider::Live { cpu_window } => sample_live(*cpu_window),
            ConditionProvider::Fixed(cv) => Ok(*cv),
            ConditionProvider::Scripted(seq) => seq.pop_front().ok_or(ProbeError::Exhausted),
        }
    }
}

fn now_secs() -> Result<f64, ProbeError> {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .map_err(|e| ProbeError::Unavailable { metric: "timestamp", reason: e.to_string() })
}

fn sample_live(window: Duration) -> Result<ConditionVector, ProbeError> {
    let cpu_percent = os::cpu_percent(window)?;
    let process_count = os::process_count()?;
    let timestamp = now_secs()?;
    ConditionVector::new(cpu_percent.clamp(0.0, 100.0), process_count, timestamp)
}

#[cfg(target_os = "linux")]
mod os {
    use std::fs;
    use std::time::Duration;

    use super::ProbeError;

    fn unavailable(metric: &'static str, reason: impl ToString) -> ProbeError {
        ProbeError::Unavailable { metric, reason: reason.to_string() }
    }

    /// (busy, total) jiffies from the aggregate `cpu` line of /proc/stat.
    fn cpu_times() -> Result<(u64, u64), ProbeError> {
        let stat = fs::read_to_string("/proc/stat").map_err(|e| unavailable("cpu_percent", e))?;
        let line = stat
            .lines()
            .find(|l| l.starts_with("cpu "))
            .ok_or_else(|| unavailable("cpu_percent", "no aggregate cpu line in /proc/stat"))?;
        let fields = line
            .split_whitespace()
            .skip(1)
            .map(str::parse::<u64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| unavailable("cpu_percent", e))?;
        if fields.len() < 4 {
            return Err(unavailable("cpu_percent", "short cpu line in /proc/stat"));
        }
        // user nice system idle iowait irq softirq steal [guest guest_nice]
        let total: u64 = fields.iter().take(8).sum();
        let idle = fields[3] + fields.get(4).copied().unwrap_or(0);
        Ok((total - idle, total))
    }

    pub fn cpu_percent(window: Duration) -> Result<f64, ProbeError> {
        let (busy0, total0) = cpu_times()?;
        std::thread::sleep(window);
        let (busy1, total1) = cpu_times()?;
        let total = total1.saturating_sub(total0);
        if total == 0 {
            return Ok(0.0);
        }
        Ok(100.0 * busy1.saturating_sub(busy0) as f64 / total as f64)
    }

    pub fn process_count() -> Result<u32, ProbeError> {
        let entries = fs::read_dir("/proc").map_err(|e| unavailable("process_count", e))?;
        let n = entries
            .filter_map(Result::ok)
            .filter(|e| e.file_name().to_str().is_some_and(|s| s.bytes().all(|b| b.is_ascii_digit())))
            .count();
        Ok(u32::try_from(n).unwrap_or(u32::MAX))
    }
}

#[cfg(not(target_os = "linux"))]
mod os {
    use std::time::Duration;

    use super::ProbeError;

    pub fn cpu_percent(_window: Duration) -> Result<f64, ProbeError> {
        Err(ProbeError::Unavailable { metric: "cpu_percent", reason: "no live source on this platform".into() })
    }

    pub fn process_count() -> Result<u32, ProbeError> {
        Err(ProbeError::Unavailable { metric: "process_count", reason: "no live source on this platform".into() })
    }
}
