//! Egocentric costmaps, ego-motion alignment and the stacked observation.

mod costmap;
mod transform;

pub use costmap::{scan_to_costmap, Costmap, CostmapParams};
pub use transform::{affine_transform, EgoMotion, WarpMode};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scalar::Scalar;
use crate::sim::{Action, LidarScan, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationParams<T> {
    pub map: CostmapParams<T>,
    /// Number of stacked frames.
    pub stack: usize,
}

impl<T: Scalar> Default for ObservationParams<T> {
    fn default() -> Self {
        Self {
            map: CostmapParams::default(),
            stack: 3,
        }
    }
}

/// A robot's local view: `stack` costmaps aligned to the current frame
/// (newest last), the goal in the robot frame and the robot's own velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub frames: Vec<Costmap<T>>,
    pub goal_rel: Vec2<T>,
    pub velocity: Action<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn newest(&self) -> &Costmap<T> {
        self.frames.last().expect("observation has at least one frame")
    }
}

/// Builds an observation from a scan history. `motions[i]` is the ego-motion
/// from the pose of `scans[i]` to the pose of `scans[i + 1]`. Older frames
/// are warped into the newest frame by the composed motion; short histories
/// are padded by repeating the oldest frame.
pub fn build_observation<T: Scalar>(
    scans: &[LidarScan<T>],
    motions: &[EgoMotion<T>],
    robot: &RobotState<T>,
    params: &ObservationParams<T>,
) -> Result<Observation<T>> {
    if scans.is_empty() {
        return Err(Error::History("at least one scan required".into()));
    }
    if motions.len() + 1 != scans.len() {
        return Err(Error::History(format!(
            "{} scans need {} ego-motions, got {}",
            scans.len(),
            scans.len() - 1,
            motions.len()
        )));
    }
    if params.stack == 0 {
        return Err(Error::InvalidConfig("observation stack must be >= 1".into()));
    }
    let n = scans.len();
    let first = n.saturating_sub(params.stack);
    let mut frames = Vec::with_capacity(params.stack);
    // Composite motion from scan k to the newest scan, built newest-first.
    let mut to_now = EgoMotion::identity();
    for k in (first..n).rev() {
        if k < n - 1 {
            to_now = motions[k].then(&to_now);
        }
        let map = scan_to_costmap(&scans[k], &params.map);
        frames.push(affine_transform(&map, &to_now, WarpMode::Forward));
    }
    frames.reverse();
    while frames.len() < params.stack {
        frames.insert(0, frames[0].clone());
    }
    let goal_rel = robot.pose.to_local(robot.goal - robot.pose.position());
    Ok(Observation {
        frames,
        goal_rel,
        velocity: robot.velocity,
    })
}

/// Rolling per-robot scan history of bounded length.
#[derive(Debug, Clone)]
pub struct ScanHistory<T> {
    scans: VecDeque<LidarScan<T>>,
    motions: VecDeque<EgoMotion<T>>,
    capacity: usize,
}

impl<T: Scalar> ScanHistory<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            scans: VecDeque::with_capacity(capacity + 1),
            motions: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    /// Appends a scan; `motion` is the ego-motion since the previous scan and
    /// is ignored for the first one.
    pub fn push(&mut self, scan: LidarScan<T>, motion: EgoMotion<T>) {
        if !self.scans.is_empty() {
            self.motions.push_back(motion);
        }
        self.scans.push_back(scan);
        while self.scans.len() > self.capacity {
            self.scans.pop_front();
            self.motions.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn observe(&mut self, robot: &RobotState<T>, params: &ObservationParams<T>) -> Result<Observation<T>> {
        let scans = self.scans.make_contiguous();
        let motions = self.motions.make_contiguous();
        build_observation(scans, motions, robot, params)
    }
}
