//! Small planar geometry helpers.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// A 2-vector in meters (or cells, where noted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm(self) -> T {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    /// Rotates counter-clockwise by `angle` radians.
    #[inline]
    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Scalar> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl<T: Scalar> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Scalar>(angle: T) -> T {
    let two_pi = T::TAU();
    let mut a = angle % two_pi;
    if a <= -T::PI() {
        a = a + two_pi;
    } else if a > T::PI() {
        a = a - two_pi;
    }
    a
}

/// Distance along a ray (origin `o`, unit direction `d`) to the first
/// intersection with a circle, if the hit lies at a positive distance.
pub fn ray_circle<T: Scalar>(o: Vec2<T>, d: Vec2<T>, center: Vec2<T>, radius: T) -> Option<T> {
    let oc = o - center;
    let b = oc.dot(d);
    let c = oc.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > T::zero() {
        return Some(t0);
    }
    // Origin inside the circle: report the exit point.
    let t1 = -b + sq;
    (t1 > T::zero() && c < T::zero()).then_some(t1)
}

/// Ray vs axis-aligned rectangle (slab test). Returns the entry distance, or
/// the exit distance if the origin is inside.
pub fn ray_aabb<T: Scalar>(o: Vec2<T>, d: Vec2<T>, min: Vec2<T>, max: Vec2<T>) -> Option<T> {
    let mut t_near = T::neg_infinity();
    let mut t_far = T::infinity();
    for (oi, di, lo, hi) in [(o.x, d.x, min.x, max.x), (o.y, d.y, min.y, max.y)] {
        if di.abs() < T::epsilon() {
            if oi < lo || oi > hi {
                return None;
            }
        } else {
            let inv = T::one() / di;
            let (mut a, mut b) = ((lo - oi) * inv, (hi - oi) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t_near = t_near.max(a);
            t_far = t_far.min(b);
            if t_near > t_far {
                return None;
            }
        }
    }
    if t_far <= T::zero() {
        None
    } else if t_near > T::zero() {
        Some(t_near)
    } else {
        Some(t_far)
    }
}

/// Distance from a ray origin inside a box to the box boundary.
pub fn ray_exit_box<T: Scalar>(o: Vec2<T>, d: Vec2<T>, min: Vec2<T>, max: Vec2<T>) -> Option<T> {
    let mut t = T::infinity();
    for (oi, di, lo, hi) in [(o.x, d.x, min.x, max.x), (o.y, d.y, min.y, max.y)] {
        if di > T::epsilon() {
            t = t.min((hi - oi) / di);
        } else if di < -T::epsilon() {
            t = t.min((lo - oi) / di);
        }
    }
    (t.is_finite() && t > T::zero()).then_some(t)
}

/// Euclidean distance from a point to an axis-aligned rectangle (0 inside).
pub fn point_aabb_distance<T: Scalar>(p: Vec2<T>, min: Vec2<T>, max: Vec2<T>) -> T {
    let dx = (min.x - p.x).max(T::zero()).max(p.x - max.x);
    let dy = (min.y - p.y).max(T::zero()).max(p.y - max.y);
    (dx * dx + dy * dy).sqrt()
}
