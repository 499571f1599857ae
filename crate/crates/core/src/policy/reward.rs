use serde::{Deserialize, Serialize};

use crate::sim::{RobotState, RobotStatus};

/// Which safety signal enters the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r = r_g + w_c * r_c`; no collision penalty in `r_g`.
    CbfReward,
    /// `r = r_g` with the collision penalty; `r_c` is not used.
    CollisionPenalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    /// Reward per meter of progress toward the goal.
    pub k_d: f64,
    pub r_arrive: f64,
    pub r_collide: f64,
    /// Cost per step.
    pub k_t: f64,
    /// Weight of the CBF reward. A step that pushes into an obstacle costs
    /// several units of `r_c` while full-speed progress earns about one unit
    /// of `r_g`; the weight brings the two to a comparable scale.
    pub w_c: f64,
    pub mode: RewardMode,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            k_d: 10.0,
            r_arrive: 20.0,
            r_collide: 20.0,
            k_t: 0.05,
            w_c: 0.1,
            mode: RewardMode::CbfReward,
        }
    }
}

impl RewardParams {
    pub fn uses_cbf_reward(&self) -> bool {
        self.mode == RewardMode::CbfReward
    }

    /// Weighted CBF reward as it enters the total, zero when unused.
    pub fn weighted_rc(&self, r_c: f64) -> f64 {
        if self.uses_cbf_reward() {
            self.w_c * r_c
        } else {
            0.0
        }
    }
}

/// Terminal events that happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub reached: bool,
    pub collided: bool,
}

impl StepEvents {
    /// Events implied by a status transition of one robot.
    pub fn between(prev: &RobotState<f64>, next: &RobotState<f64>) -> Self {
        let fresh = prev.status == RobotStatus::Active;
        Self {
            reached: fresh && next.status == RobotStatus::Reached,
            collided: fresh && next.status == RobotStatus::Collided,
        }
    }
}

/// Dense goal reward for one robot over one step.
pub fn goal_reward(prev: &RobotState<f64>, next: &RobotState<f64>, events: StepEvents, params: &RewardParams) -> f64 {
    let progress = prev.goal_distance() - next.goal_distance();
    let mut r = params.k_d * progress - params.k_t;
    if events.reached {
        r += params.r_arrive;
    }
    if events.collided && params.mode == RewardMode::CollisionPenalty {
        r -= params.r_collide;
    }
    r
}
