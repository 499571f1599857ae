use std::fs;
use std::path::{Path, PathBuf};

use safenav::harness::{emit_outputs, episode_svg, evaluate as run_suite, read_trajectory, Metrics};
use safenav::training::{train_joint, write_log_csv};

use crate::config::RunConfig;
use crate::CliError;

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

/// Creates `--out` and writes the effective configuration into it.
pub fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cfg.out.display())))?;
    fs::write(cfg.out.join(EFFECTIVE_CONFIG), cfg.to_toml_string()?).map_err(CliError::runtime)
}

fn print_metrics(metrics: &[Metrics]) {
    for m in metrics {
        println!(
            "{:<10} {:<28} success {:.3}  collision {:.3}  done_time {:.2} s  ({} episodes)",
            m.scenario, m.method, m.success_rate, m.collision_rate, m.done_time, m.episodes
        );
    }
}

fn run_episodes(cfg: &RunConfig, keep_records: bool) -> Result<(), CliError> {
    let (scenarios, policy) = cfg.validate()?;
    prepare_out(cfg)?;
    let results = run_suite(&scenarios, &policy, &cfg.settings(), &cfg.world, cfg.seed, cfg.episodes)
        .map_err(CliError::runtime)?;
    let metrics: Vec<Metrics> = results.iter().map(|(m, _)| m.clone()).collect();
    let records: Vec<_> = if keep_records {
        results.into_iter().flat_map(|(_, r)| r).collect()
    } else {
        Vec::new()
    };
    let files = emit_outputs(&records, &metrics, &cfg.out).map_err(CliError::runtime)?;
    print_metrics(&metrics);
    println!("wrote {}", files.metrics.display());
    Ok(())
}

/// Episodes with full trajectory logs and plots.
pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    run_episodes(cfg, true)
}

/// Per-scenario metrics only.
pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    run_episodes(cfg, false)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let (scenarios, _) = cfg.validate()?;
    let [scenario] = scenarios.as_slice() else {
        return Err(CliError::Validation("train takes exactly one scenario".into()));
    };
    prepare_out(cfg)?;
    let out = train_joint(&cfg.train, scenario, &cfg.world, &cfg.settings()).map_err(CliError::runtime)?;
    let write = |name: &str, bytes: Vec<u8>| fs::write(cfg.out.join(name), bytes).map_err(CliError::runtime);
    write_log_csv(&out.log, &cfg.out.join("train_log.csv")).map_err(CliError::runtime)?;
    write(
        "policy.json",
        serde_json::to_vec_pretty(&out.params).map_err(CliError::runtime)?,
    )?;
    write(
        "predictor.json",
        serde_json::to_vec_pretty(&out.predictor).map_err(CliError::runtime)?,
    )?;
    out.dataset
        .save(&cfg.out.join("dataset.bin"))
        .map_err(CliError::runtime)?;
    if let Some(last) = out.log.last() {
        println!(
            "epoch {}: train success {:.3}, collision {:.3}, return {:.3}, {} steps, {:.1} s",
            last.epoch, last.success_rate, last.collision_rate, last.mean_return, last.total_steps, last.wall_time_s
        );
    }
    if let Some((metrics, _)) = out.evaluation {
        emit_outputs(&[], std::slice::from_ref(&metrics), &cfg.out).map_err(CliError::runtime)?;
        print_metrics(&[metrics]);
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Validation(format!("no trajectory logs in {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Re-renders `plots/*.svg` from `trajectories/*.jsonl` under `--out`.
pub fn plot(cfg: &RunConfig) -> Result<(), CliError> {
    let files = trajectory_files(&cfg.out.join("trajectories"))?;
    let records = files
        .iter()
        .map(|p| read_trajectory(p).map_err(CliError::validation))
        .collect::<Result<Vec<_>, _>>()?;
    prepare_out(cfg)?;
    let plots = cfg.out.join("plots");
    fs::create_dir_all(&plots).map_err(CliError::runtime)?;
    for (path, record) in files.iter().zip(&records) {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        fs::write(plots.join(format!("{stem}.svg")), episode_svg(record)).map_err(CliError::runtime)?;
    }
    println!("rendered {} plots into {}", records.len(), plots.display());
    Ok(())
}
