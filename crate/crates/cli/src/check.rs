//! Quick invariant self-tests, runnable on any installation.

use safenav::cbf::{barrier_value, ConstraintEval};
use safenav::geometry::Vec2;
use safenav::harness::{run_episode, scenario_world, write_trajectory, EpisodeSettings};
use safenav::observation::{Costmap, Observation};
use safenav::refiner::{refine_action, update_multipliers, Multipliers};
use safenav::sim::Action;
use safenav::world_model::predict_static;

use crate::commands::prepare_out;
use crate::config::RunConfig;
use crate::CliError;

type Check = fn(&RunConfig) -> Result<(), String>;

fn barrier_formula(cfg: &RunConfig) -> Result<(), String> {
    let p = &cfg.cbf;
    for (x, y, v) in [(1.2, 0.4, 0.8), (-0.7, 0.1, 1.0), (0.3, -0.3, 0.0)] {
        let r = f64::sqrt(x * x + y * y);
        let expect = (r - v * (x / r) * p.delta_t - p.r_min).min(p.r_max);
        let got = barrier_value(Vec2::new(x, y), v, p);
        if (got - expect).abs() > 1e-12 {
            return Err(format!("h at ({x}, {y}), v {v}: {got} vs {expect}"));
        }
    }
    Ok(())
}

fn multiplier_update(cfg: &RunConfig) -> Result<(), String> {
    let alm = &cfg.alm;
    let empty = ConstraintEval {
        height: 1,
        width: 1,
        c_cbf: vec![0.0],
        c_dyn_up: [0.0; 2],
        c_dyn_low: [0.0; 2],
        gamma: 1.0,
    };
    let m = Multipliers::uniform(alm.lambda0);
    let (next, sigma) = update_multipliers(&m, alm.sigma_max, &empty, alm);
    if next != m || sigma != alm.sigma_max {
        return Err(format!("zero violation changed multipliers or sigma ({sigma})"));
    }
    let violated = ConstraintEval {
        c_cbf: vec![-0.5],
        ..empty
    };
    let (next, _) = update_multipliers(&m, 2.0, &violated, alm);
    if next.cell(0) != alm.lambda0 + 1.0 {
        return Err(format!("cell multiplier {} vs {}", next.cell(0), alm.lambda0 + 1.0));
    }
    Ok(())
}

fn empty_observation(cfg: &RunConfig) -> Observation<f64> {
    Observation {
        frames: vec![Costmap::empty(&cfg.observation.map); cfg.observation.stack],
        goal_rel: Vec2::new(2.0, 0.0),
        velocity: Action::new(0.5, 0.0),
    }
}

fn free_space_fixed_point(cfg: &RunConfig) -> Result<(), String> {
    let obs = empty_observation(cfg);
    for a in [Action::new(0.5, 0.0), Action::new(0.9, -0.4), Action::new(0.1, 0.8)] {
        let r = refine_action(&obs, a, &cfg.predictor(), &cfg.cbf, &cfg.alm).map_err(|e| e.to_string())?;
        if r.action.dist_sq(&a).sqrt() > 1e-3 || r.r_c != 0.0 {
            return Err(format!("{a:?} refined to {:?} with r_c {}", r.action, r.r_c));
        }
    }
    Ok(())
}

fn static_identity(cfg: &RunConfig) -> Result<(), String> {
    let mut obs = empty_observation(cfg);
    let last = obs.frames.len() - 1;
    obs.frames[last].set(10, 20, true);
    let p = predict_static(&obs, Action::zero(), cfg.world.dt, &cfg.flow.motion).map_err(|e| e.to_string())?;
    if &p.costmap != obs.newest() {
        return Err("zero action moved the map".into());
    }
    Ok(())
}

fn episode_determinism(cfg: &RunConfig) -> Result<(), String> {
    let scenario = cfg.scenario_configs().map_err(|e| e.to_string())?.remove(0);
    let policy = cfg.policy().map_err(|e| e.to_string())?;
    let settings = EpisodeSettings {
        step_cap: Some(20),
        ..cfg.settings()
    };
    let once = || -> Result<Vec<u8>, String> {
        let world = scenario_world(&scenario, cfg.seed, &cfg.world).map_err(|e| e.to_string())?;
        let run = run_episode(world, &policy, &settings).map_err(|e| e.to_string())?;
        write_trajectory(&run.record).map_err(|e| e.to_string())
    };
    if once()? != once()? {
        return Err("two runs with one seed differ".into());
    }
    Ok(())
}

fn config_round_trip(cfg: &RunConfig) -> Result<(), String> {
    let text = cfg.to_toml_string().map_err(|e| e.to_string())?;
    match RunConfig::from_toml_str(&text) {
        Ok(back) if &back == cfg => Ok(()),
        Ok(_) => Err("effective config does not reproduce itself".into()),
        Err(e) => Err(e.to_string()),
    }
}

const CHECKS: [(&str, Check); 6] = [
    ("barrier formula", barrier_formula),
    ("multiplier update", multiplier_update),
    ("free-space fixed point", free_space_fixed_point),
    ("static prediction identity", static_identity),
    ("episode determinism", episode_determinism),
    ("config round trip", config_round_trip),
];

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check(cfg) {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} checks failed", CHECKS.len())));
    }
    println!("all {} checks passed", CHECKS.len());
    Ok(())
}
