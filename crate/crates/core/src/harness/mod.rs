//! Closed-loop episodes, evaluation metrics and result files.

mod metrics;
mod output;

pub use metrics::{aggregate, Metrics, Outcomes};
pub use output::{
    emit_outputs, episode_svg, read_metrics_csv, read_trajectory, write_trajectory, EpisodeHeader, TrajectoryLine,
    SCHEMA_VERSION,
};

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbf::{evaluate_h, CbfParams};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::observation::{EgoMotion, Observation, ObservationParams, ScanHistory};
use crate::policy::{
    digest_observation, featurize, goal_reward, nominal_policy, policy_forward, NominalParams, PolicyParams,
    ReplayRecord, RewardParams, StepEvents,
};
use crate::refiner::{cbf_reward, refine_action, AlmParams};
use crate::sim::{
    load_scenario, raycast_lidar, step_world, Action, Bounds, Obstacle, Pose, RobotStatus, ScenarioConfig, WorldParams,
    WorldState,
};
use crate::world_model::{Predictor, StaticModel, Transition};

/// Action source for every robot in an episode (all robots share it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Nominal(NominalParams),
    Mlp(PolicyParams),
    /// Uniform random actions inside the box.
    Random,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Nominal(_) => "nominal",
            Policy::Mlp(_) => "mlp",
            Policy::Random => "random",
        }
    }

    fn act(&self, obs: &Observation<f64>, params: &WorldParams<f64>, rng: &mut ChaCha8Rng) -> Result<Action<f64>> {
        let b = &params.action_bounds;
        match self {
            Policy::Nominal(p) => Ok(nominal_policy(obs, p)),
            Policy::Mlp(p) => policy_forward(p, &featurize(obs, b), b),
            Policy::Random => Ok(Action::new(
                rng.random_range(b.min.linear..=b.max.linear),
                rng.random_range(b.min.angular..=b.max.angular),
            )),
        }
    }
}

/// Everything besides the world and the policy that shapes an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSettings {
    pub refine: bool,
    pub predictor: Predictor<f64>,
    pub cbf: CbfParams<f64>,
    pub alm: AlmParams<f64>,
    pub observation: ObservationParams<f64>,
    pub reward: RewardParams,
    /// Stops the episode early (robots still active count as timeouts).
    pub step_cap: Option<usize>,
    /// Keep every n-th per-robot transition for model fitting (0 keeps none).
    pub transition_stride: usize,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            refine: true,
            predictor: Predictor::Static(StaticModel::default()),
            cbf: CbfParams::default(),
            alm: AlmParams::default(),
            observation: ObservationParams::default(),
            reward: RewardParams::default(),
            step_cap: None,
            transition_stride: 0,
        }
    }
}

impl EpisodeSettings {
    pub fn validate(&self) -> Result<()> {
        self.cbf.validate()?;
        self.alm.validate()?;
        if self.observation.stack == 0 {
            return Err(Error::InvalidConfig("observation stack must be >= 1".into()));
        }
        Ok(())
    }

    /// Label used in metrics and file names, e.g. `nominal+refine-flow`.
    pub fn method_label(&self, policy: &Policy) -> String {
        if self.refine {
            format!("{}+refine-{}", policy.name(), self.predictor.name())
        } else {
            policy.name().to_string()
        }
    }
}

/// One robot during one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotStep {
    pub robot: usize,
    pub pose: Pose<f64>,
    pub a_nom: Action<f64>,
    pub a_star: Action<f64>,
    pub r_g: f64,
    pub r_c: f64,
    /// Smallest barrier value over occupied cells (r_max when none).
    pub min_h: f64,
    /// Status after the tick.
    pub status: RobotStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub step: usize,
    pub time: f64,
    pub robots: Vec<RobotStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSummary {
    pub start: Pose<f64>,
    pub goal: Vec2<f64>,
    pub radius: f64,
    pub outcome: RobotStatus,
    pub path: Vec<Vec2<f64>>,
    /// Sum of `r_g + r_c` over the episode.
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub dt: f64,
    pub bounds: Bounds<f64>,
    pub obstacles: Vec<Obstacle<f64>>,
    pub robots: Vec<RobotSummary>,
    pub ticks: Vec<TickRecord>,
    /// Simulated seconds until every robot was terminal (or the cap).
    pub done_time: f64,
    /// Perceptron evaluations made by the policy.
    pub policy_queries: usize,
    /// Refinements that changed the nominal action.
    pub interventions: usize,
    /// Lagrangian evaluations spent by the refiner.
    pub refine_evaluations: usize,
    /// Not written to trajectory logs, which must be reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EpisodeRecord {
    pub fn outcomes(&self) -> Vec<RobotStatus> {
        self.robots
            .iter()
            .map(|r| {
                if r.outcome == RobotStatus::Active {
                    RobotStatus::Timeout
                } else {
                    r.outcome
                }
            })
            .collect()
    }

    /// Per-step minimum barrier values over all robots, in tick order.
    pub fn min_h_series(&self) -> Vec<f64> {
        self.ticks
            .iter()
            .map(|t| t.robots.iter().map(|r| r.min_h).fold(f64::INFINITY, f64::min))
            .collect()
    }

    pub fn mean_return(&self) -> f64 {
        self.robots.iter().map(|r| r.episode_return).sum::<f64>() / self.robots.len().max(1) as f64
    }
}

/// Episode output plus the data gathered for training.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub record: EpisodeRecord,
    pub replay: Vec<ReplayRecord>,
    pub transitions: Vec<Transition<f64>>,
}

/// Runs one episode. Each tick, every active robot observes, queries the
/// policy, optionally refines, and all actions are applied together.
pub fn run_episode(world: WorldState<f64>, policy: &Policy, settings: &EpisodeSettings) -> Result<EpisodeRun> {
    let started = Instant::now();
    let (scenario_name, episode_seed) = (world.scenario_name.clone(), world.rng_seed);
    let context = |step: usize, e: Error| Error::Episode {
        scenario: scenario_name.clone(),
        seed: episode_seed,
        step,
        source: Box::new(e),
    };
    settings.validate().map_err(|e| context(0, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(world.rng_seed ^ 0x5eed_a11c);
    let dt = world.params.dt;
    let n = world.robots.len();
    let stack = settings.observation.stack;
    let mut histories: Vec<ScanHistory<f64>> = (0..n).map(|_| ScanHistory::new(stack)).collect();
    let mut observations = Vec::with_capacity(n);
    for (i, history) in histories.iter_mut().enumerate() {
        history.push(raycast_lidar(&world, i), EgoMotion::identity());
        observations.push(
            history
                .observe(&world.robots[i], &settings.observation)
                .map_err(|e| context(0, e))?,
        );
    }
    let mut record = EpisodeRecord {
        scenario: world.scenario_name.clone(),
        method: settings.method_label(policy),
        seed: world.rng_seed,
        dt,
        bounds: world.bounds,
        obstacles: world.obstacles.clone(),
        robots: world
            .robots
            .iter()
            .map(|r| RobotSummary {
                start: r.pose,
                goal: r.goal,
                radius: r.radius,
                outcome: r.status,
                path: vec![r.pose.position()],
                episode_return: 0.0,
            })
            .collect(),
        ticks: Vec::new(),
        done_time: 0.0,
        policy_queries: 0,
        interventions: 0,
        refine_evaluations: 0,
        wall_time_s: 0.0,
    };
    let mut replay = Vec::new();
    let mut transitions = Vec::new();
    let cap = settings.step_cap.unwrap_or(usize::MAX);
    let mut world = world;
    let mut tick = 0usize;
    let mut memo: Vec<Option<(Observation<f64>, Action<f64>, (Action<f64>, f64))>> = vec![None; n];
    while !world.all_terminal() && tick < cap {
        let step = world.step;
        let active: Vec<usize> = (0..n).filter(|&i| !world.robots[i].status.is_terminal()).collect();
        let mut actions = vec![Action::zero(); n];
        let mut plan = Vec::with_capacity(active.len());
        for &i in &active {
            let obs = &observations[i];
            let a_nom = policy.act(obs, &world.params, &mut rng).map_err(|e| context(step, e))?;
            if matches!(policy, Policy::Mlp(_)) {
                record.policy_queries += 1;
            }
            let (a_star, r_c) = if settings.refine {
                // Refinement is a pure function of (observation, nominal
                // action); a robot held in place repeats both exactly.
                match &memo[i] {
                    Some((o, a, out)) if a == &a_nom && o == obs => *out,
                    _ => {
                        let res = refine_action(obs, a_nom, &settings.predictor, &settings.cbf, &settings.alm)
                            .map_err(|e| context(step, e))?;
                        record.refine_evaluations += res.evaluations;
                        memo[i] = Some((obs.clone(), a_nom, (res.action, res.r_c)));
                        (res.action, res.r_c)
                    }
                }
            } else if settings.reward.uses_cbf_reward() {
                let r_c = cbf_reward(obs, a_nom, &settings.predictor, &settings.cbf, &settings.alm)
                    .map_err(|e| context(step, e))?;
                (a_nom, r_c)
            } else {
                (a_nom, 0.0)
            };
            if a_star != a_nom {
                record.interventions += 1;
            }
            let min_h = evaluate_h(obs.newest(), obs.velocity, &settings.cbf)
                .min_h()
                .unwrap_or(settings.cbf.r_max);
            actions[i] = a_star;
            plan.push((i, a_nom, a_star, r_c, min_h));
        }
        let next = step_world(&world, &actions, dt).map_err(|e| context(step, e))?;
        let mut robots = Vec::with_capacity(plan.len());
        for (i, a_nom, a_star, r_c, min_h) in plan {
            let (prev, now) = (&world.robots[i], &next.robots[i]);
            let history = &mut histories[i];
            history.push(raycast_lidar(&next, i), EgoMotion::between(&prev.pose, &now.pose));
            let next_obs = history
                .observe(now, &settings.observation)
                .map_err(|e| context(step, e))?;
            let r_g = goal_reward(prev, now, StepEvents::between(prev, now), &settings.reward);
            let r_c = settings.reward.weighted_rc(r_c);
            let rec = ReplayRecord::new(
                digest_observation(&observations[i]),
                a_nom,
                a_star,
                digest_observation(&next_obs),
                r_g,
                r_c,
                now.status.is_terminal(),
            );
            let summary = &mut record.robots[i];
            summary.episode_return += rec.r;
            summary.path.push(now.pose.position());
            summary.outcome = now.status;
            replay.push(rec);
            if settings.transition_stride > 0 && step.is_multiple_of(settings.transition_stride) {
                transitions.push(Transition {
                    obs: observations[i].clone(),
                    action: a_star,
                    next: next_obs.newest().clone(),
                    delta_t: dt,
                });
            }
            observations[i] = next_obs;
            robots.push(RobotStep {
                robot: i,
                pose: now.pose,
                a_nom,
                a_star,
                r_g,
                r_c,
                min_h,
                status: now.status,
            });
        }
        record.ticks.push(TickRecord {
            step,
            time: next.time,
            robots,
        });
        world = next;
        tick += 1;
    }
    record.done_time = world.time;
    record.wall_time_s = started.elapsed().as_secs_f64();
    Ok(EpisodeRun {
        record,
        replay,
        transitions,
    })
}

/// Seed of the `round`-th episode of an evaluation seeded with `base`.
pub fn episode_seed(base: u64, round: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(round as u64)
}

/// Loads a named preset (or the given config) with the episode's seed.
pub fn scenario_world(config: &ScenarioConfig, seed: u64, params: &WorldParams<f64>) -> Result<WorldState<f64>> {
    let mut cfg = config.clone();
    cfg.seed = seed;
    load_scenario(&cfg, params)
}

/// Runs `repeats` episodes of each scenario, seeds derived from `base_seed`,
/// and aggregates per scenario. Episodes may run in parallel; results keep
/// seed order.
pub fn evaluate(
    suite: &[ScenarioConfig],
    policy: &Policy,
    settings: &EpisodeSettings,
    params: &WorldParams<f64>,
    base_seed: u64,
    repeats: usize,
) -> Result<Vec<(Metrics, Vec<EpisodeRecord>)>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    settings.validate()?;
    suite
        .iter()
        .map(|config| {
            let records = (0..repeats)
                .into_par_iter()
                .map(|k| {
                    let world = scenario_world(config, episode_seed(base_seed, k), params)?;
                    run_episode(world, policy, settings).map(|run| run.record)
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = aggregate(&config.scenario_name, &settings.method_label(policy), &records);
            Ok((metrics, records))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Bounds, RobotState};

    fn corridor(obstacles: Vec<Obstacle<f64>>) -> WorldState<f64> {
        let params = WorldParams::default();
        WorldState {
            scenario_name: "corridor".into(),
            robots: vec![RobotState {
                pose: Pose::new(-3.0, 0.0, 0.0),
                velocity: Action::zero(),
                goal: Vec2::new(3.0, 0.0),
                radius: params.robot_radius,
                status: RobotStatus::Active,
            }],
            obstacles,
            bounds: Bounds {
                min: Vec2::new(-5.0, -3.0),
                max: Vec2::new(5.0, 3.0),
            },
            time: 0.0,
            step: 0,
            time_cap_steps: 300,
            rng_seed: 1,
            params,
        }
    }

    #[test]
    fn empty_world_reaches_goal_monotonically() {
        let settings = EpisodeSettings {
            refine: false,
            ..Default::default()
        };
        let run = run_episode(corridor(vec![]), &Policy::Nominal(NominalParams::default()), &settings).unwrap();
        let r = &run.record;
        assert_eq!(r.outcomes(), vec![RobotStatus::Reached]);
        let goal = r.robots[0].goal;
        let d: Vec<f64> = r.robots[0].path.iter().map(|p| (goal - *p).norm()).collect();
        assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(run.replay.iter().all(|x| x.validate().is_ok()));
    }

    #[test]
    fn wall_ahead_refined_run_does_not_collide() {
        let wall = Obstacle::Rect {
            center: Vec2::new(0.0, 0.0),
            size: Vec2::new(0.4, 5.9),
        };
        let settings = EpisodeSettings::default();
        let run = run_episode(
            corridor(vec![wall.clone()]),
            &Policy::Nominal(NominalParams::default()),
            &settings,
        )
        .unwrap();
        assert_ne!(run.record.outcomes()[0], RobotStatus::Collided);
        assert!(run.record.min_h_series().iter().all(|h| h.is_finite()));
        let unrefined = EpisodeSettings {
            refine: false,
            ..settings
        };
        let run = run_episode(
            corridor(vec![wall]),
            &Policy::Nominal(NominalParams::default()),
            &unrefined,
        )
        .unwrap();
        assert_eq!(run.record.outcomes()[0], RobotStatus::Collided);
    }

    #[test]
    fn refinement_only_changes_trajectory_after_first_intervention() {
        let wall = Obstacle::Circle {
            center: Vec2::new(0.0, 0.1),
            radius: 0.4,
        };
        let policy = Policy::Nominal(NominalParams::default());
        let on = run_episode(corridor(vec![wall.clone()]), &policy, &EpisodeSettings::default()).unwrap();
        let off = run_episode(
            corridor(vec![wall]),
            &policy,
            &EpisodeSettings {
                refine: false,
                ..Default::default()
            },
        )
        .unwrap();
        let first = on
            .record
            .ticks
            .iter()
            .position(|t| t.robots.iter().any(|r| r.a_nom != r.a_star))
            .expect("refiner intervenes");
        for k in 0..=first {
            assert_eq!(on.record.ticks[k].robots[0].a_nom, off.record.ticks[k].robots[0].a_nom);
        }
        for k in 0..first {
            assert_eq!(on.record.ticks[k].robots[0].pose, off.record.ticks[k].robots[0].pose);
        }
        assert_ne!(
            on.record.ticks[first].robots[0].pose,
            off.record.ticks[first].robots[0].pose
        );
    }
}
