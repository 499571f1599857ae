use serde::{Deserialize, Serialize};

use super::{Obstacle, WorldState};
use crate::error::{Error, Result};
use crate::geometry::{ray_aabb, ray_circle, ray_exit_box, Vec2};
use crate::scalar::Scalar;

/// Beam layout. Beams are uniformly spaced from `angle_min` to `angle_max`
/// inclusive, in the robot frame (0 = straight ahead, counter-clockwise
/// positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig<T> {
    pub beams: usize,
    pub angle_min: T,
    pub angle_max: T,
    pub max_range: T,
}

impl<T: Scalar> Default for LidarConfig<T> {
    /// 360 beams over the full circle at 1 degree spacing, 4 m range.
    fn default() -> Self {
        let beams = 360;
        let inc = T::TAU() / T::from_usize_lossy(beams);
        Self {
            beams,
            angle_min: -T::PI(),
            angle_max: T::PI() - inc,
            max_range: T::lit(4.0),
        }
    }
}

impl<T: Scalar> LidarConfig<T> {
    pub fn angle_increment(&self) -> T {
        if self.beams < 2 {
            T::zero()
        } else {
            (self.angle_max - self.angle_min) / T::from_usize_lossy(self.beams - 1)
        }
    }

    pub fn beam_angle(&self, i: usize) -> T {
        self.angle_min + self.angle_increment() * T::from_usize_lossy(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 || !(self.max_range > T::zero()) || self.angle_max < self.angle_min {
            return Err(Error::InvalidConfig("invalid lidar configuration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScan<T> {
    pub ranges: Vec<T>,
    pub angle_min: T,
    pub angle_max: T,
    pub max_range: T,
}

impl<T: Scalar> LidarScan<T> {
    pub fn angle_increment(&self) -> T {
        if self.ranges.len() < 2 {
            T::zero()
        } else {
            (self.angle_max - self.angle_min) / T::from_usize_lossy(self.ranges.len() - 1)
        }
    }

    pub fn beam_angle(&self, i: usize) -> T {
        self.angle_min + self.angle_increment() * T::from_usize_lossy(i)
    }

    /// A scan with every beam at max range.
    pub fn empty(cfg: &LidarConfig<T>) -> Self {
        Self {
            ranges: vec![cfg.max_range; cfg.beams],
            angle_min: cfg.angle_min,
            angle_max: cfg.angle_max,
            max_range: cfg.max_range,
        }
    }
}

/// Casts every configured beam from robot `robot_index`. Returns the distance
/// to the nearest obstacle boundary, arena wall or other robot disc, capped
/// at `max_range`.
pub fn raycast_lidar<T: Scalar>(world: &WorldState<T>, robot_index: usize) -> LidarScan<T> {
    let cfg = &world.params.lidar;
    let me = &world.robots[robot_index];
    let origin = me.pose.position();
    let floor = T::lit(1e-6);
    let ranges = (0..cfg.beams)
        .map(|i| {
            let ang = me.pose.theta + cfg.beam_angle(i);
            let dir = Vec2::new(ang.cos(), ang.sin());
            let mut best = cfg.max_range;
            if let Some(t) = ray_exit_box(origin, dir, world.bounds.min, world.bounds.max) {
                best = best.min(t);
            }
            for obs in &world.obstacles {
                let hit = match obs {
                    Obstacle::Circle { center, radius } => ray_circle(origin, dir, *center, *radius),
                    Obstacle::Rect { center, size } => {
                        let half = *size * T::half();
                        ray_aabb(origin, dir, *center - half, *center + half)
                    }
                };
                if let Some(t) = hit {
                    best = best.min(t);
                }
            }
            for (j, other) in world.robots.iter().enumerate() {
                if j == robot_index {
                    continue;
                }
                if let Some(t) = ray_circle(origin, dir, other.pose.position(), other.radius) {
                    best = best.min(t);
                }
            }
            best.max(floor)
        })
        .collect();
    LidarScan {
        ranges,
        angle_min: cfg.angle_min,
        angle_max: cfg.angle_max,
        max_range: cfg.max_range,
    }
}
