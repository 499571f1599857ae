//! Pixel-wise costmap barrier function, its one-step derivative condition and
//! the action-box constraints.
//!
//! For an occupied cell at displacement `d` from the robot (robot frame,
//! meters) and translational velocity `v = (linear, 0)`:
//!
//! ```text
//! r = |d|,  v_d = v . d / r,  h = r - v_d * delta_t - r_min
//! ```
//!
//! Cells that are free or farther than `r_max` hold `h = r_max` and take no
//! part in the constraints. Values are capped at `r_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::observation::{Costmap, EgoMotion};
use crate::scalar::Scalar;
use crate::sim::{Action, ActionBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfParams<T> {
    /// Minimum safe distance (m).
    pub r_min: T,
    /// Maximum considered distance (m).
    pub r_max: T,
    /// Look-ahead horizon (s).
    pub delta_t: T,
    pub alpha: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for CbfParams<T> {
    fn default() -> Self {
        Self {
            r_min: T::lit(0.35),
            r_max: T::lit(2.0),
            delta_t: T::lit(0.5),
            alpha: T::lit(0.5),
            epsilon: T::lit(0.01),
        }
    }
}

impl<T: Scalar> CbfParams<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > T::zero()
            && self.r_min < self.r_max
            && self.r_max.is_finite()
            && self.delta_t > T::zero()
            && self.delta_t.is_finite()
            && self.alpha > T::zero()
            && self.alpha.is_finite()
            && self.epsilon >= T::zero()
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "cbf params need 0 < r_min < r_max, delta_t > 0, alpha > 0, epsilon >= 0; got {self:?}"
            )))
        }
    }
}

/// Barrier value of an obstacle cell at robot-frame offset `d`, capped at
/// `r_max`, without the range cut-off.
#[inline]
pub fn barrier_value<T: Scalar>(d: Vec2<T>, linear: T, params: &CbfParams<T>) -> T {
    let r = d.norm();
    let v_d = if r > T::zero() { linear * d.x / r } else { T::zero() };
    (r - v_d * params.delta_t - params.r_min).min(params.r_max)
}

/// Barrier value of a single obstacle cell, or `None` when it lies beyond
/// `r_max`.
#[inline]
pub fn cell_barrier<T: Scalar>(d: Vec2<T>, linear: T, params: &CbfParams<T>) -> Option<T> {
    if d.norm() > params.r_max {
        return None;
    }
    Some(barrier_value(d, linear, params))
}

/// Per-cell barrier values over a costmap grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfField<T> {
    pub height: usize,
    pub width: usize,
    pub h: Vec<T>,
    /// Cells that take part in the constraints: occupied and within `r_max`.
    pub occupied: Vec<bool>,
}

impl<T: Scalar> CbfField<T> {
    fn free(height: usize, width: usize, r_max: T) -> Self {
        Self {
            height,
            width,
            h: vec![r_max; height * width],
            occupied: vec![false; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.h[row * self.width + col]
    }

    /// Smallest barrier value over constrained cells.
    pub fn min_h(&self) -> Option<T> {
        self.h
            .iter()
            .zip(&self.occupied)
            .filter(|(_, &o)| o)
            .map(|(&h, _)| h)
            .reduce(T::min)
    }

    /// Grayscale dump, brighter meaning more dangerous: `r_max` maps to 0 and
    /// the field minimum to 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let hi = self.h.iter().copied().fold(T::neg_infinity(), T::max);
        let lo = self.h.iter().copied().fold(T::infinity(), T::min);
        let span = (hi - lo).to_f64_lossy();
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.h.iter().map(|&h| {
            if span > 0.0 {
                (255.0 * (hi - h).to_f64_lossy() / span).round() as u8
            } else {
                0
            }
        }));
        out
    }
}

/// Evaluates the barrier on every occupied cell of `map` for the given robot
/// velocity. Only the linear component enters the formula.
pub fn evaluate_h<T: Scalar>(map: &Costmap<T>, velocity: Action<T>, params: &CbfParams<T>) -> CbfField<T> {
    let mut field = CbfField::free(map.height, map.width, params.r_max);
    for idx in map.occupied_indices() {
        if let Some(h) = cell_barrier(map.index_center(idx), velocity.linear, params) {
            field.h[idx] = h;
            field.occupied[idx] = true;
        }
    }
    field
}

/// The barrier of the predicted map brought back into the current frame.
///
/// `content` holds the predicted obstacle cells expressed in the current
/// frame and `motion` is the ego-motion to the predicted frame. Each content
/// cell is evaluated at its exact predicted-frame displacement, which is the
/// inverse-aligned field without resampling loss.
pub fn evaluate_h_aligned<T: Scalar>(
    content: &Costmap<T>,
    motion: &EgoMotion<T>,
    velocity: Action<T>,
    params: &CbfParams<T>,
) -> CbfField<T> {
    let mut field = CbfField::free(content.height, content.width, params.r_max);
    for idx in content.occupied_indices() {
        let d = motion.to_new(content.index_center(idx));
        if let Some(h) = cell_barrier(d, velocity.linear, params) {
            field.h[idx] = h;
            field.occupied[idx] = true;
        }
    }
    field
}

/// Action-box constraint values. Entries are per action component
/// `[linear, angular]` and never positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicConstraints<T> {
    pub up: [T; 2],
    pub low: [T; 2],
    pub gamma: T,
}

impl<T: Scalar> DynamicConstraints<T> {
    pub fn zero(gamma: T) -> Self {
        Self {
            up: [T::zero(); 2],
            low: [T::zero(); 2],
            gamma,
        }
    }

    pub fn up_norm(&self) -> T {
        (self.up[0] * self.up[0] + self.up[1] * self.up[1]).sqrt()
    }

    pub fn low_norm(&self) -> T {
        (self.low[0] * self.low[0] + self.low[1] * self.low[1]).sqrt()
    }
}

pub fn dynamic_constraints<T: Scalar>(action: Action<T>, bounds: &ActionBounds<T>, gamma: T) -> DynamicConstraints<T> {
    let a = action.as_array();
    let lo = bounds.min.as_array();
    let hi = bounds.max.as_array();
    DynamicConstraints {
        up: [(hi[0] - a[0]).min(T::zero()), (hi[1] - a[1]).min(T::zero())],
        low: [(a[0] - lo[0]).min(T::zero()), (a[1] - lo[1]).min(T::zero())],
        gamma,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEval<T> {
    pub height: usize,
    pub width: usize,
    /// `min(dh + alpha * h + epsilon, 0)` per cell.
    pub c_cbf: Vec<T>,
    pub c_dyn_up: [T; 2],
    pub c_dyn_low: [T; 2],
    pub gamma: T,
}

impl<T: Scalar> ConstraintEval<T> {
    pub fn with_dynamics(mut self, dynamics: DynamicConstraints<T>) -> Self {
        self.c_dyn_up = dynamics.up;
        self.c_dyn_low = dynamics.low;
        self.gamma = dynamics.gamma;
        self
    }

    pub fn dynamics(&self) -> DynamicConstraints<T> {
        DynamicConstraints {
            up: self.c_dyn_up,
            low: self.c_dyn_low,
            gamma: self.gamma,
        }
    }

    /// Nonzero barrier constraints as `(cell index, value)`.
    pub fn violated_cells(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.c_cbf
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < T::zero())
            .map(|(i, &c)| (i, c))
    }

    /// Largest constraint magnitude, with the action-box terms scaled by gamma.
    pub fn max_violation(&self) -> T {
        let d = self.dynamics();
        self.c_cbf
            .iter()
            .fold(T::zero(), |m, &c| m.max(-c))
            .max(d.gamma * d.up_norm())
            .max(d.gamma * d.low_norm())
    }
}

/// Compares the current field with the inverse-aligned predicted field.
/// Action-box entries are left at zero; see [`ConstraintEval::with_dynamics`].
pub fn derivative_condition<T: Scalar>(
    current: &CbfField<T>,
    predicted_aligned: &CbfField<T>,
    params: &CbfParams<T>,
) -> Result<ConstraintEval<T>> {
    if current.shape() != predicted_aligned.shape() {
        return Err(Error::ShapeMismatch {
            left: current.shape(),
            right: predicted_aligned.shape(),
        });
    }
    let c_cbf = (0..current.h.len())
        .map(|i| {
            if current.occupied[i] || predicted_aligned.occupied[i] {
                cbf_constraint(current.h[i], predicted_aligned.h[i], params)
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(ConstraintEval {
        height: current.height,
        width: current.width,
        c_cbf,
        c_dyn_up: [T::zero(); 2],
        c_dyn_low: [T::zero(); 2],
        gamma: T::one(),
    })
}

#[inline]
pub fn cbf_constraint<T: Scalar>(h: T, h_next: T, params: &CbfParams<T>) -> T {
    (h_next - h + params.alpha * h + params.epsilon).min(T::zero())
}

#[derive(Debug, Clone, Copy)]
struct BarrierCell<T> {
    index: usize,
    pos: Vec2<T>,
    /// Barrier value of the location under the current velocity.
    h: T,
    within: bool,
}

/// Sparse form of the derivative condition for repeated evaluation under
/// different candidate motions.
///
/// The constraint is kept per predicted obstacle location: each predicted
/// content cell compares its barrier in the predicted frame with the barrier
/// of the same location now, and takes part when it lies within `r_max` on
/// either side. Locations vacated by the prediction never bind, because
/// `r_max - (1 - alpha) h + epsilon > 0` for every `h <= r_max`. For a
/// static prediction this equals [`derivative_condition`] on the dense
/// fields, except that a cell crossing the `r_max` boundary uses its formula
/// value on the far side instead of `r_max`, which keeps the constraint
/// continuous in the action.
#[derive(Debug, Clone)]
pub struct BarrierCells<T> {
    cells: Vec<BarrierCell<T>>,
    params: CbfParams<T>,
}

impl<T: Scalar> BarrierCells<T> {
    /// `reach` bounds both the distance the robot can travel within
    /// `delta_t` and `|linear| * delta_t` for any admissible action. Cells
    /// that cannot bind under any such action are dropped up front.
    pub fn new(content: &Costmap<T>, velocity: Action<T>, reach: T, params: &CbfParams<T>) -> Self {
        let reach = reach.abs();
        let keep = T::one() - params.alpha;
        let cells = content
            .occupied_indices()
            .filter_map(|index| {
                let pos = content.index_center(index);
                let r = pos.norm();
                if r > params.r_max + reach {
                    return None;
                }
                let h = barrier_value(pos, velocity.linear, params);
                let h_next_floor = (r - reach - reach - params.r_min).min(params.r_max);
                if h_next_floor - keep * h + params.epsilon >= T::zero() {
                    return None;
                }
                Some(BarrierCell {
                    index,
                    pos,
                    h,
                    within: r <= params.r_max,
                })
            })
            .collect();
        Self { cells, params: *params }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Calls `f(cell index, c)` for every nonzero barrier constraint under
    /// the candidate motion and predicted linear velocity.
    #[inline]
    pub fn for_each_violation(&self, motion: &EgoMotion<T>, linear: T, mut f: impl FnMut(usize, T)) {
        let (s, c) = motion.dtheta.sin_cos();
        let t = motion.translation();
        for cell in &self.cells {
            let p = cell.pos - t;
            let d = Vec2::new(c * p.x + s * p.y, c * p.y - s * p.x);
            if !cell.within && d.norm() > self.params.r_max {
                continue;
            }
            let v = cbf_constraint(cell.h, barrier_value(d, linear, &self.params), &self.params);
            if v < T::zero() {
                f(cell.index, v);
            }
        }
    }
}
