//! Joint training: random-action warmup, then one cross-entropy-method
//! generation per epoch, with every rollout refined and rewarded with
//! `r = r_g + r_c`.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    aggregate, episode_seed, evaluate, run_episode, scenario_world, EpisodeRecord, EpisodeSettings, Metrics, Policy,
};
use crate::policy::{
    featurize, fit_output_layer, nominal_policy, Dataset, NominalParams, PolicyParams, RewardMode, FEATURE_DIM,
};
use crate::sim::{ScenarioConfig, WorldParams};
use crate::world_model::{prediction_error, FlowPredictor, Predictor, StaticModel, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// N.
    pub epochs: usize,
    /// K: environment steps per epoch, also the step cap of each rollout.
    pub steps_per_epoch: usize,
    /// E: random-action steps before the policy is first queried.
    pub warmup_steps: usize,
    /// M: epochs refined under the static model before switching to flow.
    pub static_epochs: usize,
    pub population: usize,
    pub elite_frac: f64,
    pub episodes_per_candidate: usize,
    /// Episodes of the final evaluation (refinement on).
    pub eval_episodes: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub hidden: usize,
    /// Initial sampling std of the hidden layer.
    pub sigma_hidden: f64,
    /// Initial sampling std of the output layer.
    pub sigma_output: f64,
    pub sigma_floor: f64,
    /// Weight of the elite variance in the std update.
    pub smoothing: f64,
    /// Imitate the nominal controller on warmup observations before the
    /// first generation.
    pub warm_start: bool,
    pub ridge: f64,
    pub flow_gains: Vec<f64>,
    /// Keep every n-th transition for model fitting.
    pub transition_stride: usize,
    /// Most recent transitions kept for model fitting.
    pub max_transitions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            steps_per_epoch: 200,
            warmup_steps: 400,
            static_epochs: 10,
            population: 8,
            elite_frac: 0.25,
            episodes_per_candidate: 1,
            eval_episodes: 20,
            seed: 0,
            eval_seed: 1000,
            hidden: 32,
            sigma_hidden: 0.05,
            sigma_output: 0.5,
            sigma_floor: 0.02,
            smoothing: 0.7,
            warm_start: true,
            ridge: 1e-2,
            flow_gains: vec![0.0, 0.5, 1.0, 1.5],
            transition_stride: 10,
            max_transitions: 128,
        }
    }
}

impl TrainConfig {
    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("epochs and steps_per_epoch must be >= 1");
        }
        if self.warmup_steps > self.epochs * self.steps_per_epoch {
            return bad("warmup_steps must be <= epochs * steps_per_epoch");
        }
        if self.static_epochs > self.epochs {
            return bad("static_epochs must be <= epochs");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return bad("elite_frac must be in (0, 1]");
        }
        if self.population < 2 * self.elites() {
            return bad("population must be >= 2 * elites");
        }
        if self.episodes_per_candidate == 0 || self.hidden == 0 {
            return bad("episodes_per_candidate and hidden must be >= 1");
        }
        let stds = [self.sigma_hidden, self.sigma_output, self.sigma_floor, self.ridge];
        if !stds.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return bad("sigmas and ridge must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return bad("smoothing must be in [0, 1]");
        }
        if self.flow_gains.is_empty() || !self.flow_gains.iter().all(|g| g.is_finite()) {
            return bad("flow_gains must be non-empty and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Cem,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub mean_return: f64,
    /// Prediction error of the epoch's model on the epoch's transitions
    /// (NaN without transitions).
    pub pred_error: f64,
    pub wall_time_s: f64,
    pub phase: Phase,
    pub predictor: String,
    pub total_steps: usize,
    pub policy_queries: usize,
    /// Mean score of the elites and of the whole population (NaN in warmup).
    pub elite_return: f64,
    pub population_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Highest-scoring candidate over all generations.
    pub params: PolicyParams,
    pub best_score: f64,
    /// Final sampling mean.
    pub mean: PolicyParams,
    pub log: Vec<EpochLog>,
    pub dataset: Dataset,
    /// Model in use at the end of training.
    pub predictor: Predictor<f64>,
    /// Evaluation of `params` with refinement on (absent if `eval_episodes` is 0).
    pub evaluation: Option<(Metrics, Vec<EpisodeRecord>)>,
}

struct Rollouts {
    records: Vec<EpisodeRecord>,
    transitions: Vec<Transition<f64>>,
    replay: Vec<crate::policy::ReplayRecord>,
}

fn rollouts(
    scenario: &ScenarioConfig,
    world: &WorldParams<f64>,
    policy: &Policy,
    settings: &EpisodeSettings,
    seeds: &[u64],
) -> Result<Rollouts> {
    let runs = seeds
        .par_iter()
        .map(|&s| run_episode(scenario_world(scenario, s, world)?, policy, settings))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Rollouts {
        records: Vec::with_capacity(runs.len()),
        transitions: Vec::new(),
        replay: Vec::new(),
    };
    for r in runs {
        out.records.push(r.record);
        out.transitions.extend(r.transitions);
        out.replay.extend(r.replay);
    }
    Ok(out)
}

fn score(records: &[EpisodeRecord]) -> f64 {
    records.iter().map(EpisodeRecord::mean_return).sum::<f64>() / records.len().max(1) as f64
}

/// Runs the training loop on `scenario`.
///
/// With `RewardMode::CbfReward` every rollout is refined and the reward is
/// `r_g + w_c * r_c`. With `RewardMode::CollisionPenalty` rollouts are
/// unrefined and the reward carries the collision penalty instead; the
/// final evaluation refines in both modes.
pub fn train_joint(
    cfg: &TrainConfig,
    scenario: &ScenarioConfig,
    world: &WorldParams<f64>,
    settings: &EpisodeSettings,
) -> Result<TrainOutput> {
    cfg.validate()?;
    settings.validate()?;
    let started = Instant::now();
    let bounds = world.action_bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let refine_in_training = settings.reward.mode == RewardMode::CbfReward;
    let motion = *crate::world_model::TransitionModel::motion_model(&settings.predictor);
    let static_model = Predictor::Static(StaticModel { motion });
    let mut flow = FlowPredictor {
        motion,
        ..Default::default()
    };

    let mut mean = PolicyParams::random_hidden(FEATURE_DIM, cfg.hidden, &mut rng);
    let hidden_len = mean.w1.len() + mean.b1.len();
    let mut sigma: Vec<f64> = (0..mean.len())
        .map(|k| {
            if k < hidden_len {
                cfg.sigma_hidden
            } else {
                cfg.sigma_output
            }
        })
        .collect();
    let elites = cfg.elites();

    let mut dataset = Dataset::new();
    let mut buffer: Vec<Transition<f64>> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, PolicyParams)> = None;
    let mut warm_started = false;
    let nominal = NominalParams {
        bounds,
        ..Default::default()
    };
    // Warmup features and nominal-controller targets for the warm start.
    let mut imitation: (Vec<Vec<f64>>, Vec<crate::sim::Action<f64>>) = (Vec::new(), Vec::new());
    let mut total_steps = 0usize;
    let mut predictor = static_model;

    for epoch in 0..cfg.epochs {
        if epoch >= cfg.static_epochs && !buffer.is_empty() {
            flow.fit(&buffer, &cfg.flow_gains)?;
            predictor = Predictor::Flow(flow);
        }
        let warmup = total_steps < cfg.warmup_steps;
        let epoch_settings = EpisodeSettings {
            refine: refine_in_training,
            predictor,
            step_cap: Some(cfg.steps_per_epoch),
            // Warmup keeps every transition for the imitation warm start.
            transition_stride: if warmup { 1 } else { cfg.transition_stride },
            ..settings.clone()
        };
        let gen_seeds: Vec<u64> = (0..cfg.episodes_per_candidate)
            .map(|j| episode_seed(cfg.seed, epoch * cfg.episodes_per_candidate + j))
            .collect();

        let (phase, candidates, results) = if warmup {
            let r = rollouts(scenario, world, &Policy::Random, &epoch_settings, &gen_seeds[..1])?;
            (Phase::Warmup, Vec::new(), vec![r])
        } else {
            if !warm_started && cfg.warm_start && !imitation.0.is_empty() {
                fit_output_layer(&mut mean, &imitation.0, &imitation.1, &bounds, cfg.ridge)?;
                imitation = (Vec::new(), Vec::new());
            }
            warm_started = true;
            let base = mean.to_vec();
            let mut candidates = vec![mean.clone()];
            for _ in 1..cfg.population {
                let v: Vec<f64> = base
                    .iter()
                    .zip(&sigma)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect();
                candidates.push(PolicyParams::from_vec(FEATURE_DIM, cfg.hidden, &v)?);
            }
            let results = candidates
                .iter()
                .map(|c| rollouts(scenario, world, &Policy::Mlp(c.clone()), &epoch_settings, &gen_seeds))
                .collect::<Result<Vec<_>>>()?;
            (Phase::Cem, candidates, results)
        };

        let records: Vec<EpisodeRecord> = results.iter().flat_map(|r| r.records.iter().cloned()).collect();
        let mut transitions: Vec<Transition<f64>> =
            results.iter().flat_map(|r| r.transitions.iter().cloned()).collect();
        if warmup {
            if cfg.warm_start {
                for t in &transitions {
                    imitation.0.push(featurize(&t.obs, &bounds));
                    imitation.1.push(nominal_policy(&t.obs, &nominal));
                }
            }
            let stride = cfg.transition_stride.max(1);
            transitions = transitions.into_iter().step_by(stride).collect();
            if cfg.transition_stride == 0 {
                transitions.clear();
            }
        }
        for r in &results {
            for rec in &r.replay {
                dataset.append(*rec)?;
            }
        }
        let pred_error = if transitions.is_empty() {
            f64::NAN
        } else {
            prediction_error(&predictor, &transitions)?
        };
        buffer.extend(transitions);
        if buffer.len() > cfg.max_transitions {
            buffer.drain(..buffer.len() - cfg.max_transitions);
        }

        let (elite_return, population_return) = if phase == Phase::Cem {
            let scores: Vec<f64> = results.iter().map(|r| score(&r.records)).collect();
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let top = &order[..elites];
            if best.as_ref().is_none_or(|(s, _)| scores[order[0]] > *s) {
                best = Some((scores[order[0]], candidates[order[0]].clone()));
            }
            let vecs: Vec<Vec<f64>> = top.iter().map(|&i| candidates[i].to_vec()).collect();
            let n = vecs.len() as f64;
            let mut next = vec![0.0; sigma.len()];
            for v in &vecs {
                for (m, x) in next.iter_mut().zip(v) {
                    *m += x / n;
                }
            }
            for (k, s) in sigma.iter_mut().enumerate() {
                let var = vecs.iter().map(|v| (v[k] - next[k]).powi(2)).sum::<f64>() / n;
                *s = (cfg.smoothing * var + (1.0 - cfg.smoothing) * *s * *s)
                    .sqrt()
                    .max(cfg.sigma_floor);
            }
            mean = PolicyParams::from_vec(FEATURE_DIM, cfg.hidden, &next)?;
            let elite = top.iter().map(|&i| scores[i]).sum::<f64>() / elites as f64;
            (elite, scores.iter().sum::<f64>() / scores.len() as f64)
        } else {
            (f64::NAN, f64::NAN)
        };

        total_steps += cfg.steps_per_epoch;
        let m = aggregate(&scenario.scenario_name, "train", &records);
        log.push(EpochLog {
            epoch,
            success_rate: m.success_rate,
            collision_rate: m.collision_rate,
            mean_return: score(&records),
            pred_error,
            wall_time_s: started.elapsed().as_secs_f64(),
            phase,
            predictor: predictor.name().to_string(),
            total_steps,
            policy_queries: records.iter().map(|r| r.policy_queries).sum(),
            elite_return,
            population_return,
        });
    }

    let (best_score, params) = best.unwrap_or((f64::NAN, mean.clone()));
    let evaluation = if cfg.eval_episodes > 0 {
        let eval_settings = EpisodeSettings {
            refine: true,
            predictor,
            ..settings.clone()
        };
        let mut out = evaluate(
            std::slice::from_ref(scenario),
            &Policy::Mlp(params.clone()),
            &eval_settings,
            world,
            cfg.eval_seed,
            cfg.eval_episodes,
        )?;
        out.pop()
    } else {
        None
    };
    Ok(TrainOutput {
        params,
        best_score,
        mean,
        log,
        dataset,
        predictor,
        evaluation,
    })
}

/// Writes the log as CSV, required columns first.
pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Output(e.to_string()))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
