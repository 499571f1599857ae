use serde::{Deserialize, Serialize};

use super::Costmap;
use crate::geometry::{wrap_angle, Vec2};
use crate::scalar::Scalar;
use crate::sim::Pose;

/// Displacement of the robot frame between two instants, expressed in the
/// earlier frame: the new origin sits at `(dx, dy)` and the new heading is
/// rotated by `dtheta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoMotion<T> {
    pub dx: T,
    pub dy: T,
    pub dtheta: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// Re-express a map from the earlier frame in the displaced frame.
    Forward,
    /// Bring a map given in the displaced frame back to the earlier frame.
    Inverse,
}

impl<T: Scalar> EgoMotion<T> {
    pub fn new(dx: T, dy: T, dtheta: T) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn identity() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn translation(&self) -> Vec2<T> {
        Vec2::new(self.dx, self.dy)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dtheta.is_finite()
    }

    /// Motion between two world poses.
    pub fn between(prev: &Pose<T>, next: &Pose<T>) -> Self {
        let d = prev.to_local(next.position() - prev.position());
        Self::new(d.x, d.y, wrap_angle(next.theta - prev.theta))
    }

    /// `self` followed by `next` (with `next` expressed in the frame reached
    /// after `self`).
    pub fn then(&self, next: &Self) -> Self {
        let d = self.translation() + next.translation().rotate(self.dtheta);
        Self::new(d.x, d.y, self.dtheta + next.dtheta)
    }

    pub fn inverse(&self) -> Self {
        let d = (-self.translation()).rotate(-self.dtheta);
        Self::new(d.x, d.y, -self.dtheta)
    }

    /// Coordinates in the displaced frame of a point given in the earlier frame.
    #[inline]
    pub fn to_new(&self, p_old: Vec2<T>) -> Vec2<T> {
        (p_old - self.translation()).rotate(-self.dtheta)
    }

    /// Coordinates in the earlier frame of a point given in the displaced frame.
    #[inline]
    pub fn to_old(&self, p_new: Vec2<T>) -> Vec2<T> {
        p_new.rotate(self.dtheta) + self.translation()
    }
}

/// Resamples `map` under the ego-motion with bilinear interpolation and
/// re-binarizes at 0.5. Samples falling outside the source map read as free.
pub fn affine_transform<T: Scalar>(map: &Costmap<T>, motion: &EgoMotion<T>, mode: WarpMode) -> Costmap<T> {
    let mut out = Costmap::empty(&map.params());
    if *motion == EgoMotion::identity() {
        out.cells.clone_from(&map.cells);
        return out;
    }
    let thresh = T::half();
    for r in 0..map.height {
        for c in 0..map.width {
            let p = map.cell_center(r, c);
            let src = match mode {
                WarpMode::Forward => motion.to_old(p),
                WarpMode::Inverse => motion.to_new(p),
            };
            let (rf, cf) = map.grid_coords(src);
            if map.bilinear(rf, cf) >= thresh {
                out.set(r, c, true);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::CostmapParams;
    use proptest::prelude::*;

    fn blob_map() -> Costmap<f64> {
        let mut m = Costmap::empty(&CostmapParams::default());
        for r in 20..28 {
            for c in 20..28 {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn identity_motion_is_identity() {
        let mut m = blob_map();
        m.set(3, 40, true);
        assert_eq!(affine_transform(&m, &EgoMotion::identity(), WarpMode::Forward), m);
        assert_eq!(affine_transform(&m, &EgoMotion::identity(), WarpMode::Inverse), m);
    }

    #[test]
    fn one_cell_forward_shifts_rows_toward_robot() {
        let mut m = Costmap::empty(&CostmapParams::<f64>::default());
        m.set(10, 24, true);
        m.set(10, 25, true);
        m.set(5, 30, true);
        let out = affine_transform(&m, &EgoMotion::new(0.1, 0.0, 0.0), WarpMode::Forward);
        let mut expected = Costmap::empty(&m.params());
        expected.set(11, 24, true);
        expected.set(11, 25, true);
        expected.set(6, 30, true);
        assert_eq!(out, expected);
    }

    #[test]
    fn quarter_turn_round_trip_recovers_center() {
        let m = blob_map();
        let g = EgoMotion::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let back = affine_transform(&affine_transform(&m, &g, WarpMode::Forward), &g, WarpMode::Inverse);
        assert_eq!(back, m);
    }

    #[test]
    fn compose_and_inverse() {
        let a = EgoMotion::<f64>::new(0.3, -0.1, 0.4);
        let b = EgoMotion::new(-0.2, 0.5, -1.1);
        let p = Vec2::new(1.3, -0.7);
        let ab = a.then(&b);
        let q1 = b.to_new(a.to_new(p));
        let q2 = ab.to_new(p);
        assert!((q1 - q2).norm() < 1e-12);
        let back = a.then(&a.inverse());
        assert!(back.translation().norm() < 1e-12 && back.dtheta.abs() < 1e-12);
    }

    #[test]
    fn between_poses_matches_local_offset() {
        let prev = Pose::new(1.0, 2.0, std::f64::consts::FRAC_PI_2);
        let next = Pose::new(1.0, 2.5, std::f64::consts::FRAC_PI_2 + 0.1);
        let m = EgoMotion::between(&prev, &next);
        assert!((m.dx - 0.5).abs() < 1e-12 && m.dy.abs() < 1e-12);
        assert!((m.dtheta - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn integer_translation_conserves_occupancy(
            cells in proptest::collection::vec((8usize..40, 8usize..40), 1..40),
            shift_rows in -6i32..=6,
            shift_cols in -6i32..=6,
        ) {
            let mut m = Costmap::empty(&CostmapParams::<f64>::default());
            for &(r, c) in &cells {
                m.set(r, c, true);
            }
            // Moving forward k cells moves content k rows toward the robot; moving
            // left moves it right.
            let motion = EgoMotion::new(shift_rows as f64 * 0.1, shift_cols as f64 * 0.1, 0.0);
            let out = affine_transform(&m, &motion, WarpMode::Forward);
            let mut expected = Costmap::empty(&m.params());
            for idx in m.occupied_indices() {
                let (r, c) = ((idx / 48) as i32 + shift_rows, (idx % 48) as i32 + shift_cols);
                if (0..48).contains(&r) && (0..48).contains(&c) {
                    expected.set(r as usize, c as usize, true);
                }
            }
            prop_assert_eq!(out.occupied_count(), expected.occupied_count());
            prop_assert_eq!(out, expected);
        }
    }
}
