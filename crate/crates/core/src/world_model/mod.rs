//! One-step look-ahead predictors `M(s, a)`.
//!
//! A predictor splits the next observation into content and motion. The
//! content is where obstacles will be after `delta_t`, still expressed in the
//! current robot frame; it does not depend on the candidate action. The
//! motion is the ego-motion the action induces over `delta_t`. The predicted
//! costmap is the content warped forward by that motion.

mod flow;

pub use flow::{advect, connected_blobs, estimate_flow, match_blobs, Blob, FlowModel, FlowParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{affine_transform, Costmap, EgoMotion, Observation, WarpMode};
use crate::scalar::Scalar;
use crate::sim::{integrate_unicycle, Action, ActionBounds, Pose};

/// Kinematic settings shared with the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel<T> {
    pub bounds: ActionBounds<T>,
    /// Simulator step (s); also the interval between observation frames.
    pub dt: T,
}

impl<T: Scalar> Default for MotionModel<T> {
    fn default() -> Self {
        Self {
            bounds: ActionBounds::default(),
            dt: T::lit(0.1),
        }
    }
}

impl<T: Scalar> MotionModel<T> {
    /// Ego-motion of holding `action` (clamped) for `delta_t`, integrated with
    /// the simulator's Euler step. A trailing partial step covers any
    /// remainder of `delta_t` not divisible by `dt`.
    pub fn ego_motion(&self, action: Action<T>, delta_t: T) -> EgoMotion<T> {
        let a = self.bounds.clamp(action);
        let ratio = delta_t / self.dt;
        let full = (ratio + T::lit(1e-9)).floor().max(T::zero());
        let n = full.to_usize().unwrap_or(0);
        let rest = delta_t - full * self.dt;
        let mut pose = Pose::new(T::zero(), T::zero(), T::zero());
        for _ in 0..n {
            pose = integrate_unicycle(pose, a, self.dt);
        }
        if rest > self.dt * T::lit(1e-9) {
            pose = integrate_unicycle(pose, a, rest);
        }
        EgoMotion::new(pose.x, pose.y, pose.theta)
    }

    /// Frame intervals covered by `delta_t`.
    pub fn steps(&self, delta_t: T) -> T {
        delta_t / self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPrediction<T> {
    /// Predicted costmap in the predicted robot frame.
    pub costmap: Costmap<T>,
    pub velocity: Action<T>,
    pub ego_motion: EgoMotion<T>,
}

pub trait TransitionModel<T: Scalar> {
    fn motion_model(&self) -> &MotionModel<T>;

    /// Obstacle occupancy after `delta_t` in the current robot frame.
    fn content(&self, obs: &Observation<T>, delta_t: T) -> Result<Costmap<T>>;

    fn predict(&self, obs: &Observation<T>, action: Action<T>, delta_t: T) -> Result<TransitionPrediction<T>> {
        let content = self.content(obs, delta_t)?;
        Ok(complete_prediction(&content, self.motion_model(), action, delta_t))
    }
}

fn complete_prediction<T: Scalar>(
    content: &Costmap<T>,
    motion: &MotionModel<T>,
    action: Action<T>,
    delta_t: T,
) -> TransitionPrediction<T> {
    let ego_motion = motion.ego_motion(action, delta_t);
    TransitionPrediction {
        costmap: affine_transform(content, &ego_motion, WarpMode::Forward),
        velocity: motion.bounds.clamp(action),
        ego_motion,
    }
}

fn newest_frame<T: Scalar>(obs: &Observation<T>) -> Result<&Costmap<T>> {
    obs.frames
        .last()
        .ok_or_else(|| Error::Prediction("observation has no frames".into()))
}

/// Quasi-static predictor: every obstacle stays put.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticModel<T> {
    pub motion: MotionModel<T>,
}

impl<T: Scalar> Default for StaticModel<T> {
    fn default() -> Self {
        Self {
            motion: MotionModel::default(),
        }
    }
}

impl<T: Scalar> TransitionModel<T> for StaticModel<T> {
    fn motion_model(&self) -> &MotionModel<T> {
        &self.motion
    }

    fn content(&self, obs: &Observation<T>, _delta_t: T) -> Result<Costmap<T>> {
        newest_frame(obs).cloned()
    }
}

pub fn predict_static<T: Scalar>(
    obs: &Observation<T>,
    action: Action<T>,
    delta_t: T,
    motion: &MotionModel<T>,
) -> Result<TransitionPrediction<T>> {
    StaticModel { motion: *motion }.predict(obs, action, delta_t)
}

/// Flow-extrapolation predictor: obstacle blobs keep their estimated
/// per-frame displacement, scaled by a fitted `gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPredictor<T> {
    pub motion: MotionModel<T>,
    pub flow: FlowParams<T>,
    pub gain: T,
}

impl<T: Scalar> Default for FlowPredictor<T> {
    fn default() -> Self {
        Self {
            motion: MotionModel::default(),
            flow: FlowParams::default(),
            gain: T::one(),
        }
    }
}

impl<T: Scalar> FlowPredictor<T> {
    /// Picks the gain with the lowest prediction error on `data`; earlier
    /// candidates win ties. Returns the chosen gain's error.
    pub fn fit(&mut self, data: &[Transition<T>], gains: &[T]) -> Result<f64> {
        if gains.is_empty() {
            return Err(Error::InvalidConfig("no candidate gains".into()));
        }
        let mut best: Option<(T, f64)> = None;
        for &g in gains {
            let candidate = Self { gain: g, ..*self };
            let e = prediction_error(&candidate, data)?;
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((g, e));
            }
        }
        let (g, e) = best.expect("gains is non-empty");
        self.gain = g;
        Ok(e)
    }
}

impl<T: Scalar> TransitionModel<T> for FlowPredictor<T> {
    fn motion_model(&self) -> &MotionModel<T> {
        &self.motion
    }

    fn content(&self, obs: &Observation<T>, delta_t: T) -> Result<Costmap<T>> {
        let newest = newest_frame(obs)?;
        let flow = estimate_flow(&obs.frames, &self.flow).map_err(|e| Error::Prediction(e.to_string()))?;
        if flow.is_zero() || self.gain == T::zero() {
            return Ok(newest.clone());
        }
        Ok(advect(newest, &flow, self.gain * self.motion.steps(delta_t)))
    }
}

pub fn predict_flow<T: Scalar>(
    obs: &Observation<T>,
    action: Action<T>,
    delta_t: T,
    predictor: &FlowPredictor<T>,
) -> Result<TransitionPrediction<T>> {
    predictor.predict(obs, action, delta_t)
}

/// Either predictor, selected at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor<T> {
    Static(StaticModel<T>),
    Flow(FlowPredictor<T>),
}

impl<T: Scalar> Predictor<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Static(_) => "static",
            Self::Flow(_) => "flow",
        }
    }
}

impl<T: Scalar> TransitionModel<T> for Predictor<T> {
    fn motion_model(&self) -> &MotionModel<T> {
        match self {
            Self::Static(m) => m.motion_model(),
            Self::Flow(m) => m.motion_model(),
        }
    }

    fn content(&self, obs: &Observation<T>, delta_t: T) -> Result<Costmap<T>> {
        match self {
            Self::Static(m) => m.content(obs, delta_t),
            Self::Flow(m) => m.content(obs, delta_t),
        }
    }
}

/// One observed transition: the observation, the applied action, the
/// realized next costmap and the time between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<T> {
    pub obs: Observation<T>,
    pub action: Action<T>,
    pub next: Costmap<T>,
    pub delta_t: T,
}

/// Mean over transitions of the symmetric difference between predicted and
/// realized occupancy, each normalized by the realized occupied count
/// (at least one).
pub fn prediction_error<T: Scalar, M: TransitionModel<T> + ?Sized>(model: &M, data: &[Transition<T>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for t in data {
        let pred = model.predict(&t.obs, t.action, t.delta_t)?;
        if !pred.costmap.same_geometry(&t.next) {
            return Err(Error::ShapeMismatch {
                left: pred.costmap.shape(),
                right: t.next.shape(),
            });
        }
        let diff = pred.costmap.symmetric_difference(&t.next) as f64;
        total += diff / t.next.occupied_count().max(1) as f64;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::observation::CostmapParams;

    fn obs_with(frames: Vec<Costmap<f64>>) -> Observation<f64> {
        Observation {
            frames,
            goal_rel: Vec2::new(1.0, 0.0),
            velocity: Action::zero(),
        }
    }

    fn blob(r0: usize, c0: usize) -> Costmap<f64> {
        let mut m = Costmap::empty(&CostmapParams::default());
        for r in r0..r0 + 3 {
            for c in c0..c0 + 3 {
                m.set(r, c, true);
            }
        }
        m
    }

    #[test]
    fn ego_motion_straight_line() {
        let m = MotionModel::<f64>::default().ego_motion(Action::new(1.0, 0.0), 0.5);
        assert!((m.dx - 0.5).abs() < 1e-12 && m.dy.abs() < 1e-12 && m.dtheta == 0.0);
    }

    #[test]
    fn ego_motion_clamps_and_handles_remainder() {
        let mm = MotionModel::<f64>::default();
        let m = mm.ego_motion(Action::new(3.0, 0.0), 0.25);
        assert!((m.dx - 0.25).abs() < 1e-12);
        let m = mm.ego_motion(Action::new(0.0, 1.0), 0.35);
        assert!((m.dtheta - 0.35).abs() < 1e-12);
    }

    #[test]
    fn zero_action_static_prediction_is_identity() {
        let obs = obs_with(vec![blob(10, 10)]);
        let p = predict_static(&obs, Action::zero(), 0.5, &MotionModel::default()).unwrap();
        assert_eq!(&p.costmap, obs.newest());
        assert_eq!(p.ego_motion, EgoMotion::identity());
        assert_eq!(p.velocity, Action::zero());
    }

    #[test]
    fn forward_action_shifts_five_rows() {
        let obs = obs_with(vec![blob(10, 10)]);
        let p = predict_static(&obs, Action::new(1.0, 0.0), 0.5, &MotionModel::default()).unwrap();
        assert_eq!(p.costmap, blob(15, 10));
        assert_eq!(p.velocity, Action::new(1.0, 0.0));
    }

    #[test]
    fn flow_reduces_to_static_on_static_frames() {
        let f = blob(10, 10);
        let obs = obs_with(vec![f.clone(), f.clone(), f]);
        let a = Action::new(0.5, 0.3);
        let s = predict_static(&obs, a, 0.5, &MotionModel::default()).unwrap();
        let p = predict_flow(&obs, a, 0.5, &FlowPredictor::default()).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn approaching_obstacle_one_step() {
        let obs = obs_with(vec![blob(8, 20), blob(9, 20), blob(10, 20)]);
        let p = predict_flow(&obs, Action::zero(), 0.1, &FlowPredictor::default()).unwrap();
        assert_eq!(p.costmap, blob(11, 20));
    }

    #[test]
    fn flow_needs_two_frames() {
        let obs = obs_with(vec![blob(8, 20)]);
        assert!(predict_flow(&obs, Action::zero(), 0.1, &FlowPredictor::default()).is_err());
    }

    #[test]
    fn prediction_error_bounds() {
        let obs = obs_with(vec![blob(10, 10)]);
        let perfect = Transition {
            obs: obs.clone(),
            action: Action::zero(),
            next: blob(10, 10),
            delta_t: 0.1,
        };
        let wrong = Transition {
            next: blob(30, 30),
            ..perfect.clone()
        };
        let m = StaticModel::default();
        assert_eq!(prediction_error(&m, std::slice::from_ref(&perfect)).unwrap(), 0.0);
        assert!(prediction_error(&m, &[wrong]).unwrap() >= 1.0);
        assert!(matches!(prediction_error(&m, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn fit_prefers_flow_on_moving_data() {
        let obs = obs_with(vec![blob(8, 20), blob(9, 20), blob(10, 20)]);
        let data = vec![Transition {
            obs,
            action: Action::zero(),
            next: blob(11, 20),
            delta_t: 0.1,
        }];
        let mut p = FlowPredictor::default();
        let e = p.fit(&data, &[0.0, 0.25, 1.0]).unwrap();
        assert_eq!(p.gain, 1.0);
        assert_eq!(e, 0.0);
    }
}
