//! Deterministic 2D multi-robot world: unicycle kinematics, static
//! obstacles, raycast lidar and per-robot terminal status.

mod lidar;
mod scenario;

pub use lidar::{raycast_lidar, LidarConfig, LidarScan};
pub use scenario::{
    load_scenario, BoundsSpec, GoalSpec, ObstacleSpec, RobotSpec, ScenarioConfig, ShapeKind, StartSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_aabb_distance, wrap_angle, Vec2};
use crate::scalar::{clamp, Scalar};

/// Planar pose; `theta` is measured counter-clockwise from world +x.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Scalar> Pose<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    /// Expresses a world-frame offset in this pose's frame (x forward, y left).
    pub fn to_local(&self, world_offset: Vec2<T>) -> Vec2<T> {
        world_offset.rotate(-self.theta)
    }
}

/// Velocity command (and, with instantaneous tracking, realized velocity).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action<T> {
    pub linear: T,
    pub angular: T,
}

impl<T: Scalar> Action<T> {
    pub fn new(linear: T, angular: T) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.linear.is_finite() && self.angular.is_finite()
    }

    pub fn as_array(&self) -> [T; 2] {
        [self.linear, self.angular]
    }

    pub fn from_array(a: [T; 2]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn dist_sq(&self, other: &Self) -> T {
        let dl = self.linear - other.linear;
        let da = self.angular - other.angular;
        dl * dl + da * da
    }

    pub fn cast<U: Scalar>(&self) -> Action<U> {
        Action::new(U::lit(self.linear.to_f64_lossy()), U::lit(self.angular.to_f64_lossy()))
    }
}

/// Componentwise action box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds<T> {
    pub min: Action<T>,
    pub max: Action<T>,
}

impl<T: Scalar> ActionBounds<T> {
    pub fn new(min: Action<T>, max: Action<T>) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, a: Action<T>) -> Action<T> {
        Action::new(
            clamp(a.linear, self.min.linear, self.max.linear),
            clamp(a.angular, self.min.angular, self.max.angular),
        )
    }

    pub fn contains(&self, a: &Action<T>) -> bool {
        a.linear >= self.min.linear
            && a.linear <= self.max.linear
            && a.angular >= self.min.angular
            && a.angular <= self.max.angular
    }

    pub fn midpoint(&self) -> Action<T> {
        Action::new(
            (self.min.linear + self.max.linear) * T::half(),
            (self.min.angular + self.max.angular) * T::half(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.linear < self.max.linear && self.min.angular < self.max.angular) {
            return Err(Error::InvalidConfig(
                "action bounds need min < max componentwise".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for ActionBounds<T> {
    fn default() -> Self {
        Self::new(Action::new(T::zero(), -T::one()), Action::new(T::one(), T::one()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotStatus {
    Active,
    Reached,
    Collided,
    Timeout,
}

impl RobotStatus {
    pub fn is_terminal(self) -> bool {
        self != RobotStatus::Active
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RobotStatus::Active => "active",
            RobotStatus::Reached => "reached",
            RobotStatus::Collided => "collided",
            RobotStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState<T> {
    pub pose: Pose<T>,
    pub velocity: Action<T>,
    pub goal: Vec2<T>,
    pub radius: T,
    pub status: RobotStatus,
}

impl<T: Scalar> RobotState<T> {
    pub fn goal_distance(&self) -> T {
        (self.goal - self.pose.position()).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle<T> {
    Circle { center: Vec2<T>, radius: T },
    Rect { center: Vec2<T>, size: Vec2<T> },
}

impl<T: Scalar> Obstacle<T> {
    /// Distance from a point to the obstacle surface (0 inside).
    pub fn distance(&self, p: Vec2<T>) -> T {
        match self {
            Obstacle::Circle { center, radius } => ((p - *center).norm() - *radius).max(T::zero()),
            Obstacle::Rect { center, size } => {
                let half = *size * T::half();
                point_aabb_distance(p, *center - half, *center + half)
            }
        }
    }

    pub fn overlaps_disc(&self, p: Vec2<T>, r: T) -> bool {
        self.distance(p) < r
    }
}

/// Axis-aligned arena; its edges are walls for both lidar and collisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn contains_disc(&self, p: Vec2<T>, r: T) -> bool {
        p.x - r >= self.min.x && p.x + r <= self.max.x && p.y - r >= self.min.y && p.y + r <= self.max.y
    }

    pub fn center(&self) -> Vec2<T> {
        (self.min + self.max) * T::half()
    }
}

/// Fixed per-configuration world parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams<T> {
    /// Simulation step in seconds.
    pub dt: T,
    pub action_bounds: ActionBounds<T>,
    pub robot_radius: T,
    pub goal_tolerance: T,
    pub lidar: LidarConfig<T>,
}

impl<T: Scalar> Default for WorldParams<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(0.1),
            action_bounds: ActionBounds::default(),
            robot_radius: T::lit(0.2),
            goal_tolerance: T::lit(0.2),
            lidar: LidarConfig::default(),
        }
    }
}

impl<T: Scalar> WorldParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if !(self.robot_radius > T::zero()) {
            return Err(Error::InvalidConfig("robot radius must be positive".into()));
        }
        if !(self.goal_tolerance > T::zero()) {
            return Err(Error::InvalidConfig("goal tolerance must be positive".into()));
        }
        self.action_bounds.validate()?;
        self.lidar.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState<T> {
    pub scenario_name: String,
    pub robots: Vec<RobotState<T>>,
    pub obstacles: Vec<Obstacle<T>>,
    pub bounds: Bounds<T>,
    pub time: T,
    pub step: usize,
    pub time_cap_steps: usize,
    pub rng_seed: u64,
    pub params: WorldParams<T>,
}

impl<T: Scalar> WorldState<T> {
    pub fn all_terminal(&self) -> bool {
        self.robots.iter().all(|r| r.status.is_terminal())
    }

    pub fn active_count(&self) -> usize {
        self.robots.iter().filter(|r| !r.status.is_terminal()).count()
    }

    fn robot_collides(&self, i: usize) -> bool {
        let r = &self.robots[i];
        let p = r.pose.position();
        if !self.bounds.contains_disc(p, r.radius) {
            return true;
        }
        if self.obstacles.iter().any(|o| o.overlaps_disc(p, r.radius)) {
            return true;
        }
        self.robots
            .iter()
            .enumerate()
            .any(|(j, other)| j != i && (other.pose.position() - p).norm() < other.radius + r.radius)
    }

    fn timed_out(&self) -> bool {
        let cap_time = T::from_usize_lossy(self.time_cap_steps) * self.params.dt;
        self.step >= self.time_cap_steps || self.time > cap_time
    }
}

/// Status each robot would have given the current configuration. Terminal
/// robots keep their status; collisions dominate goal arrival.
pub fn check_status<T: Scalar>(world: &WorldState<T>) -> Vec<RobotStatus> {
    let timed_out = world.timed_out();
    world
        .robots
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.status.is_terminal() {
                r.status
            } else if world.robot_collides(i) {
                RobotStatus::Collided
            } else if r.goal_distance() <= world.params.goal_tolerance {
                RobotStatus::Reached
            } else if timed_out {
                RobotStatus::Timeout
            } else {
                RobotStatus::Active
            }
        })
        .collect()
}

/// One Euler step of unicycle kinematics for a single pose.
#[inline]
pub fn integrate_unicycle<T: Scalar>(pose: Pose<T>, a: Action<T>, dt: T) -> Pose<T> {
    let (s, c) = pose.theta.sin_cos();
    Pose::new(
        pose.x + a.linear * c * dt,
        pose.y + a.linear * s * dt,
        wrap_angle(pose.theta + a.angular * dt),
    )
}

/// Advances the world by `dt`. `actions` holds one entry per robot; entries
/// for terminal robots are ignored. Actions are clamped to the configured
/// bounds before integration.
pub fn step_world<T: Scalar>(world: &WorldState<T>, actions: &[Action<T>], dt: T) -> Result<WorldState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    if actions.len() != world.robots.len() {
        return Err(Error::ActionCount {
            expected: world.robots.len(),
            got: actions.len(),
        });
    }
    let bounds = world.params.action_bounds;
    let mut next = world.clone();
    for (robot, action) in next.robots.iter_mut().zip(actions) {
        if robot.status.is_terminal() {
            robot.velocity = Action::zero();
            continue;
        }
        if !action.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite action {action:?}")));
        }
        let a = bounds.clamp(*action);
        robot.pose = integrate_unicycle(robot.pose, a, dt);
        robot.velocity = a;
    }
    next.step += 1;
    next.time = world.time + dt;
    let statuses = check_status(&next);
    for (robot, status) in next.robots.iter_mut().zip(statuses) {
        if status.is_terminal() {
            robot.velocity = Action::zero();
        }
        robot.status = status;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn world_with(robots: Vec<(Pose<f64>, Vec2<f64>)>) -> WorldState<f64> {
        let params = WorldParams::default();
        WorldState {
            scenario_name: "unit".into(),
            robots: robots
                .into_iter()
                .map(|(pose, goal)| RobotState {
                    pose,
                    velocity: Action::zero(),
                    goal,
                    radius: params.robot_radius,
                    status: RobotStatus::Active,
                })
                .collect(),
            obstacles: vec![],
            bounds: Bounds {
                min: Vec2::new(-10.0, -10.0),
                max: Vec2::new(10.0, 10.0),
            },
            time: 0.0,
            step: 0,
            time_cap_steps: 400,
            rng_seed: 0,
            params,
        }
    }

    #[test]
    fn straight_line_step() {
        let w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        let n = step_world(&w, &[Action::new(1.0, 0.0)], 0.1).unwrap();
        let p = n.robots[0].pose;
        assert!((p.x - 0.1).abs() < 1e-15 && p.y == 0.0 && p.theta == 0.0);
        assert!((n.time - 0.1).abs() < 1e-15);
        assert_eq!(n.step, 1);
    }

    #[test]
    fn zero_action_fixed_point() {
        let w = world_with(vec![(Pose::new(1.0, -2.0, 0.7), Vec2::new(5.0, 0.0))]);
        let n = step_world(&w, &[Action::zero()], 0.1).unwrap();
        assert_eq!(n.robots[0].pose, w.robots[0].pose);
    }

    #[test]
    fn euler_turning_step() {
        // Position uses the heading before the update.
        let mut w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        w.params.action_bounds.max.angular = PI;
        w.params.action_bounds.min.angular = -PI;
        let n = step_world(&w, &[Action::new(1.0, PI)], 0.1).unwrap();
        let p = n.robots[0].pose;
        assert!((p.x - 0.1).abs() < 1e-15);
        assert_eq!(p.y, 0.0);
        assert!((p.theta - 0.1 * PI).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clamped() {
        let w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        let n = step_world(&w, &[Action::new(3.0, -4.0)], 0.1).unwrap();
        assert_eq!(n.robots[0].velocity, Action::new(1.0, -1.0));
        assert!((n.robots[0].pose.x - 0.1).abs() < 1e-15);
    }

    #[test]
    fn action_count_mismatch_rejected() {
        let w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        let err = step_world(&w, &[], 0.1).unwrap_err();
        assert!(matches!(err, Error::ActionCount { expected: 1, got: 0 }));
    }

    #[test]
    fn reached_within_tolerance() {
        let w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(0.1, 0.0))]);
        assert_eq!(check_status(&w), vec![RobotStatus::Reached]);
    }

    #[test]
    fn overlapping_robots_both_collide() {
        let w = world_with(vec![
            (Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0)),
            (Pose::new(0.35, 0.0, 0.0), Vec2::new(-5.0, 0.0)),
        ]);
        assert_eq!(check_status(&w), vec![RobotStatus::Collided, RobotStatus::Collided]);
    }

    #[test]
    fn collision_dominates_arrival() {
        let mut w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(0.05, 0.0))]);
        w.obstacles.push(Obstacle::Circle {
            center: Vec2::new(0.3, 0.0),
            radius: 0.2,
        });
        assert_eq!(check_status(&w), vec![RobotStatus::Collided]);
    }

    #[test]
    fn timeout_after_cap() {
        let mut w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        w.time = w.time_cap_steps as f64 * w.params.dt + w.params.dt;
        assert_eq!(check_status(&w), vec![RobotStatus::Timeout]);
    }

    #[test]
    fn terminal_robots_hold_pose() {
        let mut w = world_with(vec![(Pose::new(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0))]);
        w.robots[0].status = RobotStatus::Reached;
        let n = step_world(&w, &[Action::new(1.0, 1.0)], 0.1).unwrap();
        assert_eq!(n.robots[0].pose, w.robots[0].pose);
        assert_eq!(n.robots[0].status, RobotStatus::Reached);
    }

    #[test]
    fn generic_over_f32() {
        let params = WorldParams::<f32>::default();
        let p = integrate_unicycle(Pose::new(0.0f32, 0.0, 0.0), Action::new(1.0, 0.0), params.dt);
        assert!((p.x - 0.1).abs() < 1e-7);
    }
}
