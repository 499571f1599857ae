//! Scenario files and the built-in scenario families.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! scenario_name = "sparse_4"
//! seed = 7
//! time_cap_steps = 400
//! bounds = { min = [-5.0, -5.0], max = [5.0, 5.0] }
//! # optional, used by start = "circle"
//! circle_radius = 4.5
//!
//! [[robots]]
//! start = [-3.0, 0.0, 0.0]   # x, y, theta; or "random" / "circle"
//! goal = "random"            # [x, y]; or "random" / "antipodal"
//!
//! [[obstacles]]
//! shape = "circle"           # or "rect"
//! center = [0.0, 0.0]
//! size = [0.5]               # circle: [radius]; rect: [width, height]
//! ```
//!
//! Unknown keys are rejected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Bounds, Obstacle, Pose, RobotState, RobotStatus, WorldParams, WorldState};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::scalar::Scalar;

/// Clearance between a randomly placed robot disc and any obstacle or wall.
const RANDOM_CLEARANCE: f64 = 0.5;
/// Minimum center distance between randomly placed starts (and goals).
const RANDOM_SEPARATION: f64 = 1.0;
/// Minimum straight-line distance between a random start and its goal.
const MIN_TRAVEL: f64 = 3.0;
const MAX_TRIES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Fixed([f64; 3]),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoalSpec {
    Fixed([f64; 2]),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub start: StartSpec,
    pub goal: GoalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub shape: ShapeKind,
    pub center: [f64; 2],
    pub size: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_name: String,
    pub bounds: BoundsSpec,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub seed: u64,
    pub time_cap_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle_radius: Option<f64>,
}

fn random_robots(n: usize) -> Vec<RobotSpec> {
    (0..n)
        .map(|_| RobotSpec {
            start: StartSpec::Keyword("random".into()),
            goal: GoalSpec::Keyword("random".into()),
        })
        .collect()
}

fn circle(x: f64, y: f64, r: f64) -> ObstacleSpec {
    ObstacleSpec {
        shape: ShapeKind::Circle,
        center: [x, y],
        size: vec![r],
    }
}

fn rect(x: f64, y: f64, w: f64, h: f64) -> ObstacleSpec {
    ObstacleSpec {
        shape: ShapeKind::Rect,
        center: [x, y],
        size: vec![w, h],
    }
}

impl ScenarioConfig {
    /// Names of the built-in families.
    pub const PRESETS: [&'static str; 3] = ["sparse_4", "dense_4", "empty_8"];

    /// Built-in scenario family by name, with the given seed.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let cfg = match name {
            "sparse_4" => Self {
                scenario_name: name.into(),
                bounds: BoundsSpec {
                    min: [-5.0, -5.0],
                    max: [5.0, 5.0],
                },
                robots: random_robots(4),
                obstacles: vec![
                    circle(-1.5, 1.5, 0.5),
                    circle(1.5, -1.5, 0.5),
                    rect(1.6, 1.7, 1.0, 0.6),
                    rect(-1.6, -1.5, 0.6, 1.0),
                ],
                seed,
                time_cap_steps: 400,
                circle_radius: None,
            },
            "dense_4" => Self {
                scenario_name: name.into(),
                bounds: BoundsSpec {
                    min: [-5.0, -5.0],
                    max: [5.0, 5.0],
                },
                robots: random_robots(4),
                obstacles: vec![
                    circle(-2.5, 2.1, 0.4),
                    circle(0.0, 2.6, 0.35),
                    circle(2.4, 1.9, 0.45),
                    circle(-1.2, 0.6, 0.4),
                    circle(1.2, 0.4, 0.4),
                    circle(-2.7, -0.8, 0.35),
                    circle(2.7, -1.0, 0.4),
                    rect(0.0, -1.2, 1.0, 0.5),
                    circle(-1.3, -2.6, 0.4),
                    rect(1.5, -2.7, 0.6, 0.6),
                ],
                seed,
                time_cap_steps: 400,
                circle_radius: None,
            },
            "empty_8" => Self {
                scenario_name: name.into(),
                bounds: BoundsSpec {
                    min: [-6.0, -6.0],
                    max: [6.0, 6.0],
                },
                robots: (0..8)
                    .map(|_| RobotSpec {
                        start: StartSpec::Keyword("circle".into()),
                        goal: GoalSpec::Keyword("antipodal".into()),
                    })
                    .collect(),
                obstacles: vec![],
                seed,
                time_cap_steps: 1200,
                circle_radius: Some(4.5),
            },
            _ => return None,
        };
        Some(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    fn obstacles<T: Scalar>(&self) -> Result<Vec<Obstacle<T>>> {
        self.obstacles
            .iter()
            .map(|o| {
                let center = Vec2::new(T::lit(o.center[0]), T::lit(o.center[1]));
                match (o.shape, o.size.as_slice()) {
                    (ShapeKind::Circle, [r]) if *r > 0.0 => Ok(Obstacle::Circle {
                        center,
                        radius: T::lit(*r),
                    }),
                    (ShapeKind::Rect, [w, h]) if *w > 0.0 && *h > 0.0 => Ok(Obstacle::Rect {
                        center,
                        size: Vec2::new(T::lit(*w), T::lit(*h)),
                    }),
                    _ => Err(Error::InvalidConfig(format!(
                        "obstacle {:?} at {:?}: size must be [radius] for circles or [width, height] for rects, all positive",
                        o.shape, o.center
                    ))),
                }
            })
            .collect()
    }
}

fn clear_of<T: Scalar>(p: Vec2<T>, r: T, bounds: &Bounds<T>, obstacles: &[Obstacle<T>], clearance: T) -> bool {
    bounds.contains_disc(p, r + clearance) && obstacles.iter().all(|o| o.distance(p) >= r + clearance)
}

/// Builds the initial world for a scenario. Random starts and goals are drawn
/// from a ChaCha stream seeded with `config.seed`, so identical configs give
/// bitwise-identical worlds.
pub fn load_scenario<T: Scalar>(config: &ScenarioConfig, params: &WorldParams<T>) -> Result<WorldState<T>> {
    params.validate()?;
    let name = &config.scenario_name;
    if config.robots.is_empty() {
        return Err(Error::InvalidConfig(format!("{name}: at least one robot required")));
    }
    if config.time_cap_steps == 0 {
        return Err(Error::InvalidConfig(format!("{name}: time_cap_steps must be >= 1")));
    }
    let [x0, y0] = config.bounds.min;
    let [x1, y1] = config.bounds.max;
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::InvalidConfig(format!("{name}: bounds min must be below max")));
    }
    let bounds = Bounds {
        min: Vec2::new(T::lit(x0), T::lit(y0)),
        max: Vec2::new(T::lit(x1), T::lit(y1)),
    };
    let obstacles = config.obstacles::<T>()?;
    let radius = params.robot_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.robots.len();
    let circle_offset: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let mut starts: Vec<Pose<T>> = Vec::with_capacity(n);
    for (i, spec) in config.robots.iter().enumerate() {
        let pose = match &spec.start {
            StartSpec::Fixed([x, y, th]) => {
                let pose = Pose::new(T::lit(*x), T::lit(*y), wrap_angle(T::lit(*th)));
                let p = pose.position();
                if !clear_of(p, radius, &bounds, &obstacles, T::zero()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: robot {i} start ({x}, {y}) overlaps an obstacle or lies outside bounds"
                    )));
                }
                pose
            }
            StartSpec::Keyword(k) if k == "random" => sample_start(&mut rng, radius, &bounds, &obstacles, &starts)
                .ok_or_else(|| Error::InvalidConfig(format!("{name}: could not place random start for robot {i}")))?,
            StartSpec::Keyword(k) if k == "circle" => {
                let rad = config
                    .circle_radius
                    .ok_or_else(|| Error::InvalidConfig(format!("{name}: start = \"circle\" needs circle_radius")))?;
                let ang = circle_offset + std::f64::consts::TAU * i as f64 / n as f64;
                let c = bounds.center();
                let p = c + Vec2::new(T::lit(rad * ang.cos()), T::lit(rad * ang.sin()));
                if !clear_of(p, radius, &bounds, &obstacles, T::zero()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: circle start for robot {i} overlaps an obstacle or lies outside bounds"
                    )));
                }
                Pose::new(p.x, p.y, wrap_angle(T::lit(ang + std::f64::consts::PI)))
            }
            StartSpec::Keyword(k) => return Err(Error::InvalidConfig(format!("{name}: unknown start keyword {k:?}"))),
        };
        for (j, other) in starts.iter().enumerate() {
            if (other.position() - pose.position()).norm() <= radius + radius {
                return Err(Error::InvalidConfig(format!(
                    "{name}: starts of robots {j} and {i} overlap"
                )));
            }
        }
        starts.push(pose);
    }

    let mut goals: Vec<Vec2<T>> = Vec::with_capacity(n);
    for (i, spec) in config.robots.iter().enumerate() {
        let start = starts[i].position();
        let goal = match &spec.goal {
            GoalSpec::Fixed([x, y]) => {
                let g = Vec2::new(T::lit(*x), T::lit(*y));
                if !clear_of(g, radius, &bounds, &obstacles, T::zero()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: robot {i} goal ({x}, {y}) lies inside an obstacle or outside bounds"
                    )));
                }
                g
            }
            GoalSpec::Keyword(k) if k == "random" => sample_goal(&mut rng, start, radius, &bounds, &obstacles, &goals)
                .ok_or_else(|| Error::InvalidConfig(format!("{name}: could not place random goal for robot {i}")))?,
            GoalSpec::Keyword(k) if k == "antipodal" => {
                let c = bounds.center();
                let g = c - (start - c);
                if !clear_of(g, radius, &bounds, &obstacles, T::zero()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: antipodal goal for robot {i} lies inside an obstacle or outside bounds"
                    )));
                }
                g
            }
            GoalSpec::Keyword(k) => return Err(Error::InvalidConfig(format!("{name}: unknown goal keyword {k:?}"))),
        };
        goals.push(goal);
    }

    let robots = starts
        .into_iter()
        .zip(goals)
        .map(|(pose, goal)| RobotState {
            pose,
            velocity: Action::zero(),
            goal,
            radius,
            status: RobotStatus::Active,
        })
        .collect();
    Ok(WorldState {
        scenario_name: config.scenario_name.clone(),
        robots,
        obstacles,
        bounds,
        time: T::zero(),
        step: 0,
        time_cap_steps: config.time_cap_steps,
        rng_seed: config.seed,
        params: params.clone(),
    })
}

fn uniform_point<T: Scalar>(rng: &mut ChaCha8Rng, bounds: &Bounds<T>) -> Vec2<T> {
    let x: f64 = rng.random_range(bounds.min.x.to_f64_lossy()..bounds.max.x.to_f64_lossy());
    let y: f64 = rng.random_range(bounds.min.y.to_f64_lossy()..bounds.max.y.to_f64_lossy());
    Vec2::new(T::lit(x), T::lit(y))
}

fn sample_start<T: Scalar>(
    rng: &mut ChaCha8Rng,
    radius: T,
    bounds: &Bounds<T>,
    obstacles: &[Obstacle<T>],
    taken: &[Pose<T>],
) -> Option<Pose<T>> {
    let clearance = T::lit(RANDOM_CLEARANCE);
    let sep = T::lit(RANDOM_SEPARATION);
    for _ in 0..MAX_TRIES {
        let p = uniform_point(rng, bounds);
        let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if clear_of(p, radius, bounds, obstacles, clearance) && taken.iter().all(|q| (q.position() - p).norm() >= sep) {
            return Some(Pose::new(p.x, p.y, wrap_angle(T::lit(theta))));
        }
    }
    None
}

fn sample_goal<T: Scalar>(
    rng: &mut ChaCha8Rng,
    start: Vec2<T>,
    radius: T,
    bounds: &Bounds<T>,
    obstacles: &[Obstacle<T>],
    taken: &[Vec2<T>],
) -> Option<Vec2<T>> {
    let clearance = T::lit(RANDOM_CLEARANCE);
    let sep = T::lit(RANDOM_SEPARATION);
    let travel = T::lit(MIN_TRAVEL);
    for _ in 0..MAX_TRIES {
        let p = uniform_point(rng, bounds);
        if clear_of(p, radius, bounds, obstacles, clearance)
            && (p - start).norm() >= travel
            && taken.iter().all(|q| (*q - p).norm() >= sep)
        {
            return Some(p);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_8_places_eight_separated_robots() {
        let cfg = ScenarioConfig::preset("empty_8", 7).unwrap();
        let w = load_scenario::<f64>(&cfg, &WorldParams::default()).unwrap();
        assert_eq!(w.robots.len(), 8);
        assert!(w.obstacles.is_empty());
        for i in 0..8 {
            for j in i + 1..8 {
                let d = (w.robots[i].pose.position() - w.robots[j].pose.position()).norm();
                assert!(d > 2.0 * w.robots[i].radius);
            }
        }
    }

    #[test]
    fn obstacle_on_fixed_start_rejected() {
        let mut cfg = ScenarioConfig::preset("sparse_4", 1).unwrap();
        let c = cfg.obstacles[0].center;
        cfg.robots[0].start = StartSpec::Fixed([c[0], c[1], 0.0]);
        let err = load_scenario::<f64>(&cfg, &WorldParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn goal_inside_obstacle_rejected() {
        let mut cfg = ScenarioConfig::preset("dense_4", 1).unwrap();
        let c = cfg.obstacles[3].center;
        cfg.robots[2].goal = GoalSpec::Fixed(c);
        assert!(load_scenario::<f64>(&cfg, &WorldParams::default()).is_err());
    }

    #[test]
    fn overlapping_fixed_starts_rejected() {
        let mut cfg = ScenarioConfig::preset("sparse_4", 1).unwrap();
        cfg.robots[0].start = StartSpec::Fixed([3.0, 3.0, 0.0]);
        cfg.robots[1].start = StartSpec::Fixed([3.1, 3.0, 0.0]);
        assert!(load_scenario::<f64>(&cfg, &WorldParams::default()).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        for name in ScenarioConfig::PRESETS {
            let cfg = ScenarioConfig::preset(name, 42).unwrap();
            let a = load_scenario::<f64>(&cfg, &WorldParams::default()).unwrap();
            let b = load_scenario::<f64>(&cfg, &WorldParams::default()).unwrap();
            assert_eq!(a, b);
            let bits = |w: &WorldState<f64>| {
                w.robots
                    .iter()
                    .flat_map(|r| [r.pose.x.to_bits(), r.pose.y.to_bits(), r.goal.x.to_bits()])
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = load_scenario::<f64>(&ScenarioConfig::preset("sparse_4", 1).unwrap(), &WorldParams::default()).unwrap();
        let b = load_scenario::<f64>(&ScenarioConfig::preset("sparse_4", 2).unwrap(), &WorldParams::default()).unwrap();
        assert_ne!(a.robots, b.robots);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ScenarioConfig::preset("dense_4", 3).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        let bad = format!("{text}\nfriction = 0.3\n");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn parses_documented_example() {
        let text = r#"
scenario_name = "custom"
seed = 7
time_cap_steps = 100
bounds = { min = [-5.0, -5.0], max = [5.0, 5.0] }

[[robots]]
start = [-3.0, 0.0, 0.0]
goal = [3.0, 0.0]

[[robots]]
start = "random"
goal = "random"

[[obstacles]]
shape = "rect"
center = [0.0, 2.0]
size = [1.0, 0.5]
"#;
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let w = load_scenario::<f64>(&cfg, &WorldParams::default()).unwrap();
        assert_eq!(w.robots.len(), 2);
        assert_eq!(w.robots[0].goal, Vec2::new(3.0, 0.0));
    }
}
