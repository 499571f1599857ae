//! Augmented Lagrangian refinement of a nominal action against the costmap
//! barrier and the action box.
//!
//! The barrier constraints are `C_ij <= 0` (zero when satisfied). The two
//! action-box blocks enter as the signed scalars `g = -gamma * |C_dyn|`, so
//! every constraint value is non-positive, `-lambda * g` penalizes violation
//! and the multiplier update `lambda -= sigma * g` never decreases a
//! multiplier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cbf::{dynamic_constraints, BarrierCells, CbfParams, ConstraintEval, DynamicConstraints};
use crate::error::{Error, Result};
use crate::observation::Observation;
use crate::scalar::Scalar;
use crate::sim::{Action, ActionBounds};
use crate::world_model::{MotionModel, TransitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlmParams<T> {
    pub sigma0: T,
    pub rho: T,
    pub sigma_max: T,
    /// Initial value of every multiplier.
    pub lambda0: T,
    /// Action-box normalization.
    pub gamma: T,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Initial projected-descent step.
    pub inner_step: T,
    /// Stopping tolerance on the largest constraint violation.
    pub tol: T,
    /// Central finite-difference step.
    pub fd_step: T,
    /// Divisions per axis of the coarse scan that seeds a second start when
    /// the first does not converge; 0 disables it.
    #[serde(default)]
    pub seed_divisions: usize,
    /// Budget on Lagrangian evaluations; `None` is unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<usize>,
}

impl<T: Scalar> Default for AlmParams<T> {
    fn default() -> Self {
        Self {
            sigma0: T::one(),
            rho: T::two(),
            sigma_max: T::lit(64.0),
            lambda0: T::zero(),
            gamma: T::one(),
            outer_iters: 12,
            inner_iters: 25,
            inner_step: T::one(),
            tol: T::lit(1e-3),
            fd_step: T::lit(1e-3),
            seed_divisions: 10,
            max_evaluations: None,
        }
    }
}

impl<T: Scalar> AlmParams<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma0 > T::zero()
            && self.rho > T::one()
            && self.sigma_max >= self.sigma0
            && self.lambda0 >= T::zero()
            && self.gamma > T::zero()
            && self.outer_iters > 0
            && self.inner_step > T::zero()
            && self.tol > T::zero()
            && self.fd_step > T::zero()
            && [
                self.sigma0,
                self.rho,
                self.sigma_max,
                self.lambda0,
                self.gamma,
                self.inner_step,
                self.tol,
                self.fd_step,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid ALM params {self:?}")))
        }
    }
}

/// Multipliers for the barrier cells and the two action-box blocks. Cells
/// never updated hold `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers<T> {
    pub default: T,
    pub cells: BTreeMap<usize, T>,
    pub up: T,
    pub low: T,
}

impl<T: Scalar> Multipliers<T> {
    pub fn uniform(lambda0: T) -> Self {
        Self {
            default: lambda0,
            cells: BTreeMap::new(),
            up: lambda0,
            low: lambda0,
        }
    }

    #[inline]
    pub fn cell(&self, idx: usize) -> T {
        self.cells.get(&idx).copied().unwrap_or(self.default)
    }

    pub fn max(&self) -> T {
        self.cells
            .values()
            .copied()
            .fold(self.default.max(self.up).max(self.low), T::max)
    }
}

#[inline]
fn dyn_terms<T: Scalar>(d: &DynamicConstraints<T>) -> (T, T) {
    (-(d.gamma * d.up_norm()), -(d.gamma * d.low_norm()))
}

fn lagrangian_core<T: Scalar>(
    deviation_sq: T,
    cbf: impl Iterator<Item = (usize, T)>,
    dynamics: &DynamicConstraints<T>,
    multipliers: &Multipliers<T>,
    sigma: T,
) -> T {
    let (mut lin, mut quad) = (T::zero(), T::zero());
    for (idx, c) in cbf {
        lin = lin + multipliers.cell(idx) * c;
        quad = quad + c * c;
    }
    let (g_up, g_low) = dyn_terms(dynamics);
    lin = lin + multipliers.up * g_up + multipliers.low * g_low;
    quad = quad + g_up * g_up + g_low * g_low;
    deviation_sq - lin + sigma * T::half() * quad
}

/// `|a - a_nom|^2 - (sum lambda C + lambda_up g_up + lambda_low g_low)
///  + sigma/2 (sum C^2 + g_up^2 + g_low^2)` with `g = -gamma |C_dyn|`.
pub fn lagrangian_value<T: Scalar>(
    a: Action<T>,
    a_nom: Action<T>,
    multipliers: &Multipliers<T>,
    sigma: T,
    constraints: &ConstraintEval<T>,
) -> T {
    lagrangian_core(
        a.dist_sq(&a_nom),
        constraints.violated_cells(),
        &constraints.dynamics(),
        multipliers,
        sigma,
    )
}

fn update_core<T: Scalar>(
    multipliers: &Multipliers<T>,
    sigma: T,
    cbf: impl Iterator<Item = (usize, T)>,
    dynamics: &DynamicConstraints<T>,
    alm: &AlmParams<T>,
) -> (Multipliers<T>, T) {
    let mut next = multipliers.clone();
    for (idx, c) in cbf {
        let l = next.cell(idx);
        next.cells.insert(idx, l - sigma * c);
    }
    let (g_up, g_low) = dyn_terms(dynamics);
    next.up = next.up - sigma * g_up;
    next.low = next.low - sigma * g_low;
    (next, (alm.rho * sigma).min(alm.sigma_max))
}

/// One multiplier/penalty step: `lambda -= sigma * C` for every constraint
/// and `sigma = min(rho * sigma, sigma_max)`.
pub fn update_multipliers<T: Scalar>(
    multipliers: &Multipliers<T>,
    sigma: T,
    constraints: &ConstraintEval<T>,
    alm: &AlmParams<T>,
) -> (Multipliers<T>, T) {
    update_core(
        multipliers,
        sigma,
        constraints.violated_cells(),
        &constraints.dynamics(),
        alm,
    )
}

/// Per-outer-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord<T> {
    pub iteration: usize,
    pub sigma: T,
    pub max_lambda: T,
    /// Lagrangian at the inner solution.
    pub objective: T,
    pub max_violation: T,
    pub action: Action<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult<T> {
    pub action: Action<T>,
    pub r_c: T,
    pub converged: bool,
    pub max_violation: T,
    /// Outer iterations run.
    pub iterations: usize,
    /// Lagrangian evaluations spent.
    pub evaluations: usize,
    pub trace: Vec<OuterRecord<T>>,
}

/// The refinement problem for one observation, ready for repeated
/// evaluation at candidate actions.
#[derive(Debug, Clone)]
pub struct RefineProblem<T> {
    cells: BarrierCells<T>,
    motion: MotionModel<T>,
    cbf: CbfParams<T>,
    a_nom: Action<T>,
    gamma: T,
}

impl<T: Scalar> RefineProblem<T> {
    pub fn new<M: TransitionModel<T> + ?Sized>(
        obs: &Observation<T>,
        a_nom: Action<T>,
        model: &M,
        cbf: &CbfParams<T>,
        gamma: T,
    ) -> Result<Self> {
        if !a_nom.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite nominal action {a_nom:?}")));
        }
        let content = model.content(obs, cbf.delta_t)?;
        if !content.same_geometry(obs.newest()) {
            return Err(Error::ShapeMismatch {
                left: content.shape(),
                right: obs.newest().shape(),
            });
        }
        let motion = *model.motion_model();
        let reach = motion.bounds.max.linear.abs().max(motion.bounds.min.linear.abs()) * cbf.delta_t;
        Ok(Self {
            cells: BarrierCells::new(&content, obs.velocity, reach, cbf),
            motion,
            cbf: *cbf,
            a_nom,
            gamma,
        })
    }

    pub fn bounds(&self) -> &ActionBounds<T> {
        &self.motion.bounds
    }

    pub fn nominal(&self) -> Action<T> {
        self.a_nom
    }

    /// Calls `f(cell, C)` for each violated barrier cell and returns the
    /// action-box constraints at `a`.
    pub fn constraints(&self, a: Action<T>, f: impl FnMut(usize, T)) -> DynamicConstraints<T> {
        let motion = self.motion.ego_motion(a, self.cbf.delta_t);
        let linear = self.motion.bounds.clamp(a).linear;
        self.cells.for_each_violation(&motion, linear, f);
        dynamic_constraints(a, &self.motion.bounds, self.gamma)
    }

    pub fn lagrangian(&self, a: Action<T>, multipliers: &Multipliers<T>, sigma: T) -> T {
        let mut cbf = Vec::new();
        let d = self.constraints(a, |i, c| cbf.push((i, c)));
        lagrangian_core(a.dist_sq(&self.a_nom), cbf.into_iter(), &d, multipliers, sigma)
    }

    pub fn max_violation(&self, a: Action<T>) -> T {
        let mut worst = T::zero();
        let d = self.constraints(a, |_, c| worst = worst.max(-c));
        worst.max(d.gamma * d.up_norm()).max(d.gamma * d.low_norm())
    }

    fn update(&self, a: Action<T>, multipliers: &Multipliers<T>, sigma: T, alm: &AlmParams<T>) -> (Multipliers<T>, T) {
        let mut cbf = Vec::new();
        let d = self.constraints(a, |i, c| cbf.push((i, c)));
        update_core(multipliers, sigma, cbf.into_iter(), &d, alm)
    }
}

struct Budget {
    used: usize,
    cap: Option<usize>,
}

impl Budget {
    fn exhausted(&self) -> bool {
        self.cap.is_some_and(|c| self.used >= c)
    }

    fn take(&mut self, n: usize) -> bool {
        if self.cap.is_some_and(|c| self.used + n > c) {
            return false;
        }
        self.used += n;
        true
    }
}

fn project<T: Scalar>(b: &ActionBounds<T>, x: [T; 2]) -> [T; 2] {
    b.clamp(Action::from_array(x)).as_array()
}

/// Projected Newton-type descent on `L(., multipliers, sigma)` from `x0`.
/// Gradient and curvature come from a central finite-difference stencil plus
/// one corner point for the cross term. Bounds that are active with the
/// gradient pointing outward are held fixed; the remaining block is solved
/// with the 2x2 Hessian when it is positive definite and with a curvature
/// floored diagonal otherwise. Armijo backtracking starts from `inner_step`.
fn inner_minimize<T: Scalar>(
    problem: &RefineProblem<T>,
    x0: Action<T>,
    multipliers: &Multipliers<T>,
    sigma: T,
    alm: &AlmParams<T>,
    budget: &mut Budget,
) -> Action<T> {
    let bounds = *problem.bounds();
    let (lo, hi) = (bounds.min.as_array(), bounds.max.as_array());
    let l = |x: [T; 2]| problem.lagrangian(Action::from_array(x), multipliers, sigma);
    let mut x = x0.as_array();
    if !budget.take(1) {
        return x0;
    }
    let mut fx = l(x);
    let h = alm.fd_step;
    let two_h = h + h;
    let h2 = h * h;
    let armijo = T::lit(1e-4);
    let min_step = T::lit(1e-6);
    // Accepted moves this small end the descent.
    let stall = T::lit(1e-7);
    let min_curv = T::lit(1e-2);
    for _ in 0..alm.inner_iters {
        if !budget.take(5) {
            break;
        }
        let xp = l([x[0] + h, x[1]]);
        let xm = l([x[0] - h, x[1]]);
        let yp = l([x[0], x[1] + h]);
        let ym = l([x[0], x[1] - h]);
        let pp = l([x[0] + h, x[1] + h]);
        let g = [(xp - xm) / two_h, (yp - ym) / two_h];
        if !(g[0].is_finite() && g[1].is_finite()) {
            break;
        }
        let hxx = (xp - fx - fx + xm) / h2;
        let hyy = (yp - fx - fx + ym) / h2;
        let hxy = (pp - xp - yp + fx) / h2;
        let free = [0, 1].map(|i| !((x[i] <= lo[i] && g[i] > T::zero()) || (x[i] >= hi[i] && g[i] < T::zero())));
        let det = hxx * hyy - hxy * hxy;
        let d = match free {
            [true, true] if hxx > T::zero() && det > T::zero() => {
                [(hyy * g[0] - hxy * g[1]) / det, (hxx * g[1] - hxy * g[0]) / det]
            }
            _ => [
                if free[0] { g[0] / hxx.max(min_curv) } else { T::zero() },
                if free[1] { g[1] / hyy.max(min_curv) } else { T::zero() },
            ],
        };
        let mut step = alm.inner_step;
        let mut accepted = false;
        while step > min_step {
            let cand = project(&bounds, [x[0] - step * d[0], x[1] - step * d[1]]);
            let moved = [x[0] - cand[0], x[1] - cand[1]];
            if moved[0] == T::zero() && moved[1] == T::zero() {
                break;
            }
            if !budget.take(1) {
                return Action::from_array(x);
            }
            let fc = l(cand);
            if fc <= fx - armijo * (g[0] * moved[0] + g[1] * moved[1]).max(T::zero()) && fc < fx {
                x = cand;
                fx = fc;
                accepted = moved[0].abs().max(moved[1].abs()) > stall;
                break;
            }
            step = step * T::half();
        }
        if !accepted {
            break;
        }
    }
    Action::from_array(x)
}

/// Solves the refinement problem for `a_nom`.
///
/// A nominal action that is inside the box and violates nothing beyond `tol`
/// is returned unchanged. Otherwise the outer loop alternates inner
/// minimization and multiplier updates until the violation drops to `tol`;
/// without convergence the least-violating iterate is returned (ties go to
/// the smaller deviation from `a_nom`).
pub fn refine_action<T: Scalar, M: TransitionModel<T> + ?Sized>(
    obs: &Observation<T>,
    a_nom: Action<T>,
    model: &M,
    cbf: &CbfParams<T>,
    alm: &AlmParams<T>,
) -> Result<RefineResult<T>> {
    let problem = RefineProblem::new(obs, a_nom, model, cbf, alm.gamma)?;
    Ok(refine_problem(&problem, alm))
}

pub fn refine_problem<T: Scalar>(problem: &RefineProblem<T>, alm: &AlmParams<T>) -> RefineResult<T> {
    let a_nom = problem.nominal();
    let r_c = -problem.lagrangian(a_nom, &Multipliers::uniform(alm.lambda0), alm.sigma0);
    let mut budget = Budget {
        used: 1,
        cap: alm.max_evaluations,
    };

    let nominal_violation = problem.max_violation(a_nom);
    if nominal_violation <= alm.tol && problem.bounds().contains(&a_nom) {
        return RefineResult {
            action: a_nom,
            r_c,
            converged: true,
            max_violation: nominal_violation,
            iterations: 0,
            evaluations: budget.used,
            trace: Vec::new(),
        };
    }

    let start = problem.bounds().clamp(a_nom);
    let mut run = run_alm(problem, start, alm, &mut budget);
    let mut iterations = run.trace.len();
    if !run.converged && alm.seed_divisions > 0 {
        if let Some(seed) = coarse_seed(problem, alm, &mut budget) {
            // An infeasible seed that does not beat the first run by more
            // than `tol` is not worth a second start.
            budget.used += 1;
            let seed_violation = problem.max_violation(seed);
            if seed != start && (seed_violation <= alm.tol || seed_violation + alm.tol < run.violation) {
                let second = run_alm(problem, seed, alm, &mut budget);
                iterations += second.trace.len();
                if second.better_than(&run) {
                    run = second;
                }
            }
        }
    }
    RefineResult {
        action: problem.bounds().clamp(run.action),
        r_c,
        converged: run.converged,
        max_violation: run.violation,
        iterations,
        evaluations: budget.used,
        trace: run.trace,
    }
}

struct AlmRun<T> {
    action: Action<T>,
    violation: T,
    deviation: T,
    converged: bool,
    trace: Vec<OuterRecord<T>>,
}

impl<T: Scalar> AlmRun<T> {
    fn better_than(&self, other: &Self) -> bool {
        match (self.converged, other.converged) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.deviation < other.deviation,
            (false, false) => {
                self.violation < other.violation
                    || (self.violation == other.violation && self.deviation < other.deviation)
            }
        }
    }
}

/// Outer loop from `start` with fresh multipliers. Keeps the least-violating
/// iterate (ties to the smaller deviation from the nominal action).
fn run_alm<T: Scalar>(
    problem: &RefineProblem<T>,
    start: Action<T>,
    alm: &AlmParams<T>,
    budget: &mut Budget,
) -> AlmRun<T> {
    let a_nom = problem.nominal();
    let mut multipliers = Multipliers::uniform(alm.lambda0);
    let mut sigma = alm.sigma0;
    let mut x = start;
    let mut best = AlmRun {
        action: x,
        violation: problem.max_violation(x),
        deviation: x.dist_sq(&a_nom),
        converged: false,
        trace: Vec::new(),
    };
    let stall_sq = T::lit(1e-12);
    let mut stalled = 0;
    for k in 0..alm.outer_iters {
        let prev = x;
        x = inner_minimize(problem, x, &multipliers, sigma, alm, budget);
        let v = problem.max_violation(x);
        let dev = x.dist_sq(&a_nom);
        best.trace.push(OuterRecord {
            iteration: k,
            sigma,
            max_lambda: multipliers.max(),
            objective: problem.lagrangian(x, &multipliers, sigma),
            max_violation: v,
            action: x,
        });
        if v <= alm.tol {
            best.action = x;
            best.violation = v;
            best.deviation = dev;
            best.converged = true;
            break;
        }
        let improved = v < best.violation;
        if improved || (v == best.violation && dev < best.deviation) {
            best.action = x;
            best.violation = v;
            best.deviation = dev;
        }
        // The iterate has stopped moving without reducing the violation:
        // growing the multipliers further does not change the answer.
        stalled = if !improved && x.dist_sq(&prev) <= stall_sq {
            stalled + 1
        } else {
            0
        };
        if budget.exhausted() || stalled >= 2 {
            break;
        }
        (multipliers, sigma) = problem.update(x, &multipliers, sigma, alm);
    }
    best.converged = best.violation <= alm.tol;
    best
}

/// Coarse scan of the action box: the least-deviating point within `tol`,
/// or the least-violating point if none is.
fn coarse_seed<T: Scalar>(problem: &RefineProblem<T>, alm: &AlmParams<T>, budget: &mut Budget) -> Option<Action<T>> {
    let n = alm.seed_divisions;
    if !budget.take((n + 1) * (n + 1)) {
        return None;
    }
    let b = problem.bounds();
    let a_nom = problem.nominal();
    let frac = |i: usize| T::from_usize_lossy(i) / T::from_usize_lossy(n);
    let mut feasible: Option<(T, Action<T>)> = None;
    let mut least: Option<(T, T, Action<T>)> = None;
    for i in 0..=n {
        for j in 0..=n {
            let a = Action::new(
                b.min.linear + (b.max.linear - b.min.linear) * frac(i),
                b.min.angular + (b.max.angular - b.min.angular) * frac(j),
            );
            let v = problem.max_violation(a);
            let dev = a.dist_sq(&a_nom);
            if v <= alm.tol && feasible.is_none_or(|(d, _)| dev < d) {
                feasible = Some((dev, a));
            }
            if least.is_none_or(|(lv, ld, _)| v < lv || (v == lv && dev < ld)) {
                least = Some((v, dev, a));
            }
        }
    }
    feasible.map(|(_, a)| a).or(least.map(|(_, _, a)| a))
}

/// `r_c = -L(a_nom; a_nom, lambda0, sigma0)`: zero when the nominal action
/// violates nothing, negative otherwise.
pub fn cbf_reward<T: Scalar, M: TransitionModel<T> + ?Sized>(
    obs: &Observation<T>,
    a_nom: Action<T>,
    model: &M,
    cbf: &CbfParams<T>,
    alm: &AlmParams<T>,
) -> Result<T> {
    let problem = RefineProblem::new(obs, a_nom, model, cbf, alm.gamma)?;
    Ok(-problem.lagrangian(a_nom, &Multipliers::uniform(alm.lambda0), alm.sigma0))
}
