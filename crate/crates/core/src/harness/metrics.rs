use serde::{Deserialize, Serialize};

use super::EpisodeRecord;
use crate::sim::RobotStatus;

/// Terminal outcome counts over robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub reached: usize,
    pub collided: usize,
    pub timeout: usize,
}

impl Outcomes {
    pub fn total(&self) -> usize {
        self.reached + self.collided + self.timeout
    }

    pub fn add(&mut self, status: RobotStatus) {
        match status {
            RobotStatus::Reached => self.reached += 1,
            RobotStatus::Collided => self.collided += 1,
            RobotStatus::Timeout | RobotStatus::Active => self.timeout += 1,
        }
    }
}

/// Per-scenario, per-method evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub method: String,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Mean simulated episode duration (s).
    pub done_time: f64,
    /// Standard deviation of the episode durations (s).
    pub done_time_std: f64,
    pub episodes: usize,
    pub outcomes: Outcomes,
}

/// Rates are fractions of all robots over all episodes. With no robots all
/// rates are zero.
pub fn aggregate(scenario: &str, method: &str, records: &[EpisodeRecord]) -> Metrics {
    let mut outcomes = Outcomes::default();
    for r in records {
        for s in r.outcomes() {
            outcomes.add(s);
        }
    }
    let total = outcomes.total();
    let rate = |k: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    let n = records.len();
    let mean = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| r.done_time).sum::<f64>() / n as f64
    };
    let var = if n == 0 {
        0.0
    } else {
        records.iter().map(|r| (r.done_time - mean).powi(2)).sum::<f64>() / n as f64
    };
    Metrics {
        scenario: scenario.to_string(),
        method: method.to_string(),
        success_rate: rate(outcomes.reached),
        collision_rate: rate(outcomes.collided),
        timeout_rate: rate(outcomes.timeout),
        done_time: mean,
        done_time_std: var.sqrt(),
        episodes: n,
        outcomes,
    }
}
