//! Brute-force reference for single-step refinement, written from the
//! barrier and constraint formulas without using the library's evaluators.

#![allow(dead_code)]

use rand::Rng;

pub const GRID: usize = 48;
pub const CELL: f64 = 0.1;
pub const DT: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct Consts {
    pub r_min: f64,
    pub r_max: f64,
    pub horizon: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub lin: (f64, f64),
    pub ang: (f64, f64),
}

impl Default for Consts {
    fn default() -> Self {
        Self {
            r_min: 0.35,
            r_max: 2.0,
            horizon: 0.5,
            alpha: 0.5,
            epsilon: 0.01,
            lin: (0.0, 1.0),
            ang: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    /// Occupied (row, col) cells.
    pub cells: Vec<(usize, usize)>,
    /// Current linear velocity.
    pub v0: f64,
    pub v0_angular: f64,
    pub a_nom: (f64, f64),
}

/// Robot-frame center of a cell: x ahead, y left, robot at the grid center.
pub fn center(r: usize, c: usize) -> (f64, f64) {
    let half = GRID as f64 / 2.0;
    ((half - r as f64 - 0.5) * CELL, (half - c as f64 - 0.5) * CELL)
}

/// Barrier of a cell and whether it lies within range.
fn barrier(x: f64, y: f64, v: f64, k: &Consts) -> (f64, bool) {
    let r = (x * x + y * y).sqrt();
    let h = r - v * (x / r) * k.horizon - k.r_min;
    (h.min(k.r_max), r <= k.r_max)
}

/// Pose reached after holding the clamped action for the horizon.
pub fn displacement(a: (f64, f64), k: &Consts) -> (f64, f64, f64) {
    let lin = a.0.clamp(k.lin.0, k.lin.1);
    let ang = a.1.clamp(k.ang.0, k.ang.1);
    let steps = (k.horizon / DT).round() as usize;
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..steps {
        x += lin * th.cos() * DT;
        y += lin * th.sin() * DT;
        th += ang * DT;
    }
    (x, y, th)
}

/// Smallest slack `dh + alpha h + epsilon` over constrained cells and the
/// distances to the box faces; positive when everything holds with margin.
pub fn margin(inst: &Instance, a: (f64, f64), k: &Consts) -> f64 {
    let (dx, dy, th) = displacement(a, k);
    let lin = a.0.clamp(k.lin.0, k.lin.1);
    let (s, c) = th.sin_cos();
    let mut m = (k.lin.1 - a.0).min(a.0 - k.lin.0).min(k.ang.1 - a.1).min(a.1 - k.ang.0);
    for &(r, col) in &inst.cells {
        let (px, py) = center(r, col);
        let h = barrier(px, py, inst.v0, k);
        let (qx, qy) = (px - dx, py - dy);
        let h_next = barrier(c * qx + s * qy, -s * qx + c * qy, lin, k);
        if !h.1 && !h_next.1 {
            continue;
        }
        let (h, h_next) = (h.0, h_next.0);
        m = m.min(h_next - h + k.alpha * h + k.epsilon);
    }
    m
}

/// Largest violation over barrier cells and the (gamma = 1) action box.
pub fn max_violation(inst: &Instance, a: (f64, f64), k: &Consts) -> f64 {
    let (dx, dy, th) = displacement(a, k);
    let lin = a.0.clamp(k.lin.0, k.lin.1);
    let (s, c) = th.sin_cos();
    let mut worst = 0.0f64;
    for &(r, col) in &inst.cells {
        let (px, py) = center(r, col);
        let h = barrier(px, py, inst.v0, k);
        let (qx, qy) = (px - dx, py - dy);
        let h_next = barrier(c * qx + s * qy, -s * qx + c * qy, lin, k);
        if !h.1 && !h_next.1 {
            continue;
        }
        let (h, h_next) = (h.0, h_next.0);
        let con = (h_next - h + k.alpha * h + k.epsilon).min(0.0);
        worst = worst.max(-con);
    }
    let up = ((k.lin.1 - a.0).min(0.0), (k.ang.1 - a.1).min(0.0));
    let low = ((a.0 - k.lin.0).min(0.0), (a.1 - k.ang.0).min(0.0));
    worst.max(up.0.hypot(up.1)).max(low.0.hypot(low.1))
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSolution {
    pub action: (f64, f64),
    pub violation: f64,
    pub deviation: f64,
    pub feasible: bool,
}

/// Best action on a `res`-spaced grid over the box: the least-deviating
/// point with violation at most `tol`, or the least-violating point when
/// none qualifies.
pub fn grid_optimum(inst: &Instance, k: &Consts, res: f64, tol: f64) -> OracleSolution {
    let nl = ((k.lin.1 - k.lin.0) / res).round() as usize;
    let na = ((k.ang.1 - k.ang.0) / res).round() as usize;
    let mut best_feasible: Option<OracleSolution> = None;
    let mut least: Option<OracleSolution> = None;
    for i in 0..=nl {
        for j in 0..=na {
            let a = (k.lin.0 + i as f64 * res, k.ang.0 + j as f64 * res);
            let v = max_violation(inst, a, k);
            let dev = (a.0 - inst.a_nom.0).powi(2) + (a.1 - inst.a_nom.1).powi(2);
            let sol = OracleSolution {
                action: a,
                violation: v,
                deviation: dev,
                feasible: v <= tol,
            };
            if sol.feasible && best_feasible.is_none_or(|b| dev < b.deviation) {
                best_feasible = Some(sol);
            }
            if least.is_none_or(|b| v < b.violation || (v == b.violation && dev < b.deviation)) {
                least = Some(sol);
            }
        }
    }
    best_feasible.or(least).expect("grid is non-empty")
}

/// Random obstacle layout around the robot with a random velocity and
/// nominal action (possibly outside the box).
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let mut cells = Vec::new();
    let blobs = rng.random_range(1..=4);
    for _ in 0..blobs {
        let dist = rng.random_range(0.45..1.8);
        let bearing: f64 = rng.random_range(-2.2..2.2);
        let (x, y) = (dist * bearing.cos(), dist * bearing.sin());
        let half = GRID as f64 / 2.0;
        let r0 = (half - x / CELL).floor() as i64;
        let c0 = (half - y / CELL).floor() as i64;
        let (hr, wc) = (rng.random_range(1..=6i64), rng.random_range(1..=6i64));
        for r in r0..r0 + hr {
            for c in c0..c0 + wc {
                if (0..GRID as i64).contains(&r) && (0..GRID as i64).contains(&c) {
                    let cell = (r as usize, c as usize);
                    if !cells.contains(&cell) {
                        cells.push(cell);
                    }
                }
            }
        }
    }
    cells.sort_unstable();
    Instance {
        cells,
        v0: rng.random_range(0.0..1.0),
        v0_angular: rng.random_range(-1.0..1.0),
        a_nom: (rng.random_range(-0.2..1.2), rng.random_range(-1.2..1.2)),
    }
}
