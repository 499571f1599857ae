//! Nominal controller, observation features, the trainable perceptron policy
//! and the goal reward.

mod dataset;
mod reward;

pub use dataset::{digest_costmap, digest_observation, Dataset, ReplayRecord, DATASET_VERSION};
pub use reward::{goal_reward, RewardMode, RewardParams, StepEvents};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{Costmap, Observation};
use crate::sim::{Action, ActionBounds};

/// Side length of the pooled map blocks.
pub const POOL: usize = 6;
/// Length of [`featurize`]'s output.
pub const FEATURE_DIM: usize = 2 * POOL * POOL + 4;
/// Distance (m) at which the goal-distance feature reaches tanh(1).
const GOAL_SCALE: f64 = 3.0;
/// Initial std of hidden weights on map features. A single occupied pooled
/// cell shifts a hidden unit by about this much.
const MAP_WEIGHT_STD: f64 = 0.5;

/// Proportional goal-seeking controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalParams {
    pub k_v: f64,
    pub k_w: f64,
    pub goal_tolerance: f64,
    pub bounds: ActionBounds<f64>,
}

impl Default for NominalParams {
    fn default() -> Self {
        Self {
            k_v: 1.0,
            k_w: 2.0,
            goal_tolerance: 0.2,
            bounds: ActionBounds::default(),
        }
    }
}

/// Turns toward the goal and drives at a speed proportional to the goal
/// distance, reduced linearly with the bearing error and zero beyond 90
/// degrees.
pub fn nominal_policy(obs: &Observation<f64>, params: &NominalParams) -> Action<f64> {
    let g = obs.goal_rel;
    let dist = g.norm();
    if dist < params.goal_tolerance {
        return Action::zero();
    }
    let bearing = g.y.atan2(g.x);
    let align = (1.0 - bearing.abs() / std::f64::consts::FRAC_PI_2).max(0.0);
    params
        .bounds
        .clamp(Action::new(params.k_v * dist * align, params.k_w * bearing))
}

fn pool_bounds(len: usize, k: usize) -> (usize, usize) {
    (k * len / POOL, ((k + 1) * len / POOL).max(k * len / POOL + 1).min(len))
}

/// Fixed-length input vector, every entry in [-1, 1]:
/// 36 max-pooled cells of the newest map, 36 block means of
/// (newest - previous frame), goal distance and bearing, and the velocity
/// normalized by the action bounds.
pub fn featurize(obs: &Observation<f64>, bounds: &ActionBounds<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    let newest = obs.newest();
    let previous: &Costmap<f64> = if obs.frames.len() >= 2 {
        &obs.frames[obs.frames.len() - 2]
    } else {
        newest
    };
    let (h, w) = newest.shape();
    let mut diff = Vec::with_capacity(POOL * POOL);
    for br in 0..POOL {
        let (r0, r1) = pool_bounds(h, br);
        for bc in 0..POOL {
            let (c0, c1) = pool_bounds(w, bc);
            let mut any = false;
            let mut delta = 0i64;
            for r in r0..r1 {
                for c in c0..c1 {
                    let now = newest.get(r, c);
                    any |= now;
                    delta += now as i64 - previous.get(r, c) as i64;
                }
            }
            out.push(if any { 1.0 } else { 0.0 });
            diff.push(delta as f64 / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out.extend(diff);
    let g = obs.goal_rel;
    let dist = g.norm();
    out.push((dist / GOAL_SCALE).tanh());
    out.push(if dist > 0.0 {
        g.y.atan2(g.x) / std::f64::consts::PI
    } else {
        0.0
    });
    let scale = |v: f64, lo: f64, hi: f64| (v / lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE)).clamp(-1.0, 1.0);
    out.push(scale(obs.velocity.linear, bounds.min.linear, bounds.max.linear));
    out.push(scale(obs.velocity.angular, bounds.min.angular, bounds.max.angular));
    out
}

/// Weights of a `input -> hidden (tanh) -> 2` perceptron. Row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub input: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
        }
    }

    /// Gaussian hidden layer and zero output layer. The first half of the
    /// hidden units start out connected only to the last four inputs (goal
    /// and velocity in [`featurize`]'s layout), the rest only to the map
    /// blocks, so neither signal drowns the other. All weights stay free.
    pub fn random_hidden(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        let map_inputs = input.saturating_sub(4);
        let state_units = hidden.div_ceil(2);
        let map = Normal::new(0.0, MAP_WEIGHT_STD).expect("valid std");
        let state = Normal::new(0.0, 3.0).expect("valid std");
        for (k, w) in p.w1.iter_mut().enumerate() {
            let (unit, i) = (k / input, k % input);
            *w = match (unit < state_units, i < map_inputs) {
                (true, false) => state.sample(rng),
                (false, true) => map.sample(rng),
                _ => 0.0,
            };
        }
        let bias = Normal::new(0.0, 1.0).expect("valid std");
        for b in p.b1.iter_mut() {
            *b = bias.sample(rng);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.extend(&self.b2);
        v
    }

    pub fn from_vec(input: usize, hidden: usize, v: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(input, hidden);
        if v.len() != p.len() {
            return Err(Error::Dimension {
                expected: p.len(),
                got: v.len(),
            });
        }
        let (w1, rest) = v.split_at(p.w1.len());
        let (b1, rest) = rest.split_at(p.b1.len());
        let (w2, b2) = rest.split_at(p.w2.len());
        p.w1.copy_from_slice(w1);
        p.b1.copy_from_slice(b1);
        p.w2.copy_from_slice(w2);
        p.b2.copy_from_slice(b2);
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = [
            (self.w1.len(), self.hidden * self.input),
            (self.b1.len(), self.hidden),
            (self.w2.len(), 2 * self.hidden),
            (self.b2.len(), 2),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::Dimension { expected, got });
            }
        }
        if !self.to_vec().iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("policy weights must be finite".into()));
        }
        Ok(())
    }

    /// Hidden-layer activations.
    pub fn hidden_activations(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                got: features.len(),
            });
        }
        Ok((0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input..(j + 1) * self.input];
                let z: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
                z.tanh()
            })
            .collect())
    }
}

/// Maps a pre-activation pair into the box: `mid + half_range * tanh(z)`.
pub fn squash(z: [f64; 2], bounds: &ActionBounds<f64>) -> Action<f64> {
    let mid = bounds.midpoint();
    let half_l = (bounds.max.linear - bounds.min.linear) / 2.0;
    let half_a = (bounds.max.angular - bounds.min.angular) / 2.0;
    bounds.clamp(Action::new(
        mid.linear + half_l * z[0].tanh(),
        mid.angular + half_a * z[1].tanh(),
    ))
}

/// Inverse of [`squash`] with the normalized action clipped to `±limit`.
pub fn unsquash(a: Action<f64>, bounds: &ActionBounds<f64>, limit: f64) -> [f64; 2] {
    let mid = bounds.midpoint();
    let half_l = (bounds.max.linear - bounds.min.linear) / 2.0;
    let half_a = (bounds.max.angular - bounds.min.angular) / 2.0;
    [
        ((a.linear - mid.linear) / half_l).clamp(-limit, limit).atanh(),
        ((a.angular - mid.angular) / half_a).clamp(-limit, limit).atanh(),
    ]
}

pub fn policy_forward(params: &PolicyParams, features: &[f64], bounds: &ActionBounds<f64>) -> Result<Action<f64>> {
    let hidden = params.hidden_activations(features)?;
    let mut z = params.b2.clone();
    for (k, zk) in z.iter_mut().enumerate() {
        let row = &params.w2[k * params.hidden..(k + 1) * params.hidden];
        *zk += row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>();
    }
    Ok(squash([z[0], z[1]], bounds))
}

/// Fits the output layer of `params` by ridge regression so the network
/// imitates `targets` on `features`, leaving the hidden layer untouched.
pub fn fit_output_layer(
    params: &mut PolicyParams,
    features: &[Vec<f64>],
    targets: &[Action<f64>],
    bounds: &ActionBounds<f64>,
    ridge: f64,
) -> Result<()> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: features.len(),
        });
    }
    let n = features.len();
    let m = params.hidden + 1;
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, m);
    let mut y = nalgebra::DMatrix::<f64>::zeros(n, 2);
    for (i, (x, a)) in features.iter().zip(targets).enumerate() {
        for (j, v) in params.hidden_activations(x)?.into_iter().enumerate() {
            design[(i, j)] = v;
        }
        design[(i, m - 1)] = 1.0;
        let z = unsquash(*a, bounds, 0.95);
        y[(i, 0)] = z[0];
        y[(i, 1)] = z[1];
    }
    let gram = design.transpose() * &design + nalgebra::DMatrix::<f64>::identity(m, m) * ridge;
    let rhs = design.transpose() * y;
    let sol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))?
        .solve(&rhs);
    for k in 0..2 {
        for j in 0..params.hidden {
            params.w2[k * params.hidden + j] = sol[(j, k)];
        }
        params.b2[k] = sol[(m - 1, k)];
    }
    Ok(())
}
