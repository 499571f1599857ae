use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, Metrics, RobotSummary, TickRecord};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::sim::{Bounds, Obstacle, Pose, RobotStatus};

/// Version of the trajectory JSON-lines layout.
pub const SCHEMA_VERSION: u32 = 1;
/// SVG pixels per world meter.
const SVG_SCALE: f64 = 50.0;
const SVG_MARGIN: f64 = 10.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotHeader {
    pub start: Pose<f64>,
    pub goal: Vec2<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema_version: u32,
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub dt: f64,
    pub bounds: Bounds<f64>,
    pub obstacles: Vec<Obstacle<f64>>,
    pub robots: Vec<RobotHeader>,
}

/// One line of a trajectory log: a header, one line per tick, and a closing
/// outcome line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Header(EpisodeHeader),
    Step(TickRecord),
    Outcome {
        outcomes: Vec<RobotStatus>,
        done_time: f64,
        policy_queries: usize,
        interventions: usize,
        refine_evaluations: usize,
    },
}

fn json_line(out: &mut Vec<u8>, line: &TrajectoryLine) -> Result<()> {
    serde_json::to_writer(&mut *out, line).map_err(|e| Error::Output(e.to_string()))?;
    out.push(b'\n');
    Ok(())
}

/// Serializes an episode as JSON lines.
pub fn write_trajectory(record: &EpisodeRecord) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let header = EpisodeHeader {
        schema_version: SCHEMA_VERSION,
        scenario: record.scenario.clone(),
        method: record.method.clone(),
        seed: record.seed,
        dt: record.dt,
        bounds: record.bounds,
        obstacles: record.obstacles.clone(),
        robots: record
            .robots
            .iter()
            .map(|r| RobotHeader {
                start: r.start,
                goal: r.goal,
                radius: r.radius,
            })
            .collect(),
    };
    json_line(&mut out, &TrajectoryLine::Header(header))?;
    for t in &record.ticks {
        json_line(&mut out, &TrajectoryLine::Step(t.clone()))?;
    }
    json_line(
        &mut out,
        &TrajectoryLine::Outcome {
            outcomes: record.robots.iter().map(|r| r.outcome).collect(),
            done_time: record.done_time,
            policy_queries: record.policy_queries,
            interventions: record.interventions,
            refine_evaluations: record.refine_evaluations,
        },
    )?;
    Ok(out)
}

/// Rebuilds an episode from its trajectory log.
pub fn read_trajectory(path: &Path) -> Result<EpisodeRecord> {
    let file = fs::File::open(path)?;
    let mut header: Option<EpisodeHeader> = None;
    let mut ticks = Vec::new();
    let mut outcome = None;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), k + 1)))?;
        match parsed {
            TrajectoryLine::Header(h) => {
                if h.schema_version != SCHEMA_VERSION {
                    return Err(Error::Parse(format!(
                        "{}: schema_version {} (expected {SCHEMA_VERSION})",
                        path.display(),
                        h.schema_version
                    )));
                }
                header = Some(h);
            }
            TrajectoryLine::Step(t) => ticks.push(t),
            TrajectoryLine::Outcome {
                outcomes,
                done_time,
                policy_queries,
                interventions,
                refine_evaluations,
            } => outcome = Some((outcomes, done_time, policy_queries, interventions, refine_evaluations)),
        }
    }
    let h = header.ok_or_else(|| Error::Parse(format!("{}: missing header line", path.display())))?;
    let (outcomes, done_time, policy_queries, interventions, refine_evaluations) =
        outcome.ok_or_else(|| Error::Parse(format!("{}: missing outcome line", path.display())))?;
    if outcomes.len() != h.robots.len() {
        return Err(Error::Parse(format!("{}: outcome count mismatch", path.display())));
    }
    let mut robots: Vec<RobotSummary> = h
        .robots
        .iter()
        .zip(&outcomes)
        .map(|(r, &o)| RobotSummary {
            start: r.start,
            goal: r.goal,
            radius: r.radius,
            outcome: o,
            path: vec![r.start.position()],
            episode_return: 0.0,
        })
        .collect();
    for t in &ticks {
        for s in &t.robots {
            let r = robots
                .get_mut(s.robot)
                .ok_or_else(|| Error::Parse(format!("{}: robot index {} out of range", path.display(), s.robot)))?;
            r.path.push(s.pose.position());
            r.episode_return += s.r_g + s.r_c;
        }
    }
    Ok(EpisodeRecord {
        scenario: h.scenario,
        method: h.method,
        seed: h.seed,
        dt: h.dt,
        bounds: h.bounds,
        obstacles: h.obstacles,
        robots,
        ticks,
        done_time,
        policy_queries,
        interventions,
        refine_evaluations,
        wall_time_s: 0.0,
    })
}

/// Top-down plot in world coordinates: `SVG_SCALE` pixels per meter, y up.
/// Paths are colored per robot; circles mark the goals.
pub fn episode_svg(record: &EpisodeRecord) -> String {
    let b = &record.bounds;
    let w = (b.max.x - b.min.x) * SVG_SCALE + 2.0 * SVG_MARGIN;
    let h = (b.max.y - b.min.y) * SVG_SCALE + 2.0 * SVG_MARGIN;
    let px = |p: Vec2<f64>| {
        (
            (p.x - b.min.x) * SVG_SCALE + SVG_MARGIN,
            (b.max.y - p.y) * SVG_SCALE + SVG_MARGIN,
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(
        s,
        "<!-- {} {} seed {}: {SVG_SCALE} px per meter, y up -->",
        record.scenario, record.method, record.seed
    );
    let (x0, y0) = px(Vec2::new(b.min.x, b.max.y));
    let _ = writeln!(
        s,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="white" stroke="black"/>"##,
        (b.max.x - b.min.x) * SVG_SCALE,
        (b.max.y - b.min.y) * SVG_SCALE
    );
    for o in &record.obstacles {
        match o {
            Obstacle::Circle { center, radius } => {
                let (cx, cy) = px(*center);
                let _ = writeln!(
                    s,
                    r##"<circle class="obstacle" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#999999"/>"##,
                    radius * SVG_SCALE
                );
            }
            Obstacle::Rect { center, size } => {
                let (cx, cy) = px(Vec2::new(center.x - size.x / 2.0, center.y + size.y / 2.0));
                let _ = writeln!(
                    s,
                    r##"<rect class="obstacle" x="{cx:.2}" y="{cy:.2}" width="{:.2}" height="{:.2}" fill="#999999"/>"##,
                    size.x * SVG_SCALE,
                    size.y * SVG_SCALE
                );
            }
        }
    }
    for (i, r) in record.robots.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = r
            .path
            .iter()
            .map(|p| {
                let (x, y) = px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="path" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let (gx, gy) = px(r.goal);
        let _ = writeln!(
            s,
            r#"<circle class="goal" cx="{gx:.2}" cy="{gy:.2}" r="{:.2}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            r.radius * SVG_SCALE
        );
        if r.outcome == RobotStatus::Collided {
            if let Some(last) = r.path.last() {
                let (x, y) = px(*last);
                let _ = writeln!(
                    s,
                    r#"<text class="collision" x="{x:.2}" y="{y:.2}" fill="{color}" font-size="16" text-anchor="middle">x</text>"#
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    scenario: String,
    method: String,
    success_rate: f64,
    collision_rate: f64,
    done_time_s: f64,
    episodes: usize,
}

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputFiles {
    pub metrics: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
}

fn episode_stem(r: &EpisodeRecord) -> String {
    format!("{}__{}__seed{}", r.scenario, r.method, r.seed)
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Output(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::Output(format!("{} is not writable: {e}", dir.display())))?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Writes `metrics.csv`, one `trajectories/<stem>.jsonl` and one
/// `plots/<stem>.svg` per episode. The destination is checked before anything
/// is written and the metrics file is replaced atomically.
pub fn emit_outputs(records: &[EpisodeRecord], metrics: &[Metrics], out_dir: &Path) -> Result<OutputFiles> {
    ensure_writable(out_dir)?;
    let mut files = OutputFiles::default();
    if !records.is_empty() {
        let traj_dir = out_dir.join("trajectories");
        let plot_dir = out_dir.join("plots");
        ensure_writable(&traj_dir)?;
        ensure_writable(&plot_dir)?;
        for r in records {
            let stem = episode_stem(r);
            let tp = traj_dir.join(format!("{stem}.jsonl"));
            fs::write(&tp, write_trajectory(r)?)?;
            let pp = plot_dir.join(format!("{stem}.svg"));
            fs::write(&pp, episode_svg(r))?;
            files.trajectories.push(tp);
            files.plots.push(pp);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    if metrics.is_empty() {
        w.write_record([
            "scenario",
            "method",
            "success_rate",
            "collision_rate",
            "done_time_s",
            "episodes",
        ])
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    for m in metrics {
        w.serialize(MetricsRow {
            scenario: m.scenario.clone(),
            method: m.method.clone(),
            success_rate: m.success_rate,
            collision_rate: m.collision_rate,
            done_time_s: m.done_time,
            episodes: m.episodes,
        })
        .map_err(|e| Error::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    let path = out_dir.join("metrics.csv");
    let tmp = out_dir.join("metrics.csv.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
    }
    fs::rename(&tmp, &path)?;
    files.metrics = path;
    Ok(files)
}

/// Reads a metrics file back as (scenario, method, success, collision,
/// done_time_s, episodes) rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, String, f64, f64, f64, usize)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    r.deserialize::<MetricsRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Parse(e.to_string()))?;
            Ok((
                row.scenario,
                row.method,
                row.success_rate,
                row.collision_rate,
                row.done_time_s,
                row.episodes,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{aggregate, evaluate, EpisodeSettings, Policy};
    use crate::policy::NominalParams;
    use crate::sim::{ScenarioConfig, WorldParams};

    fn two_episodes() -> (Vec<EpisodeRecord>, Vec<Metrics>) {
        let cfg = ScenarioConfig::preset("sparse_4", 0).unwrap();
        let settings = EpisodeSettings {
            refine: false,
            step_cap: Some(40),
            ..Default::default()
        };
        let out = evaluate(
            &[cfg],
            &Policy::Nominal(NominalParams::default()),
            &settings,
            &WorldParams::default(),
            2,
            2,
        )
        .unwrap();
        let (m, r) = out.into_iter().next().unwrap();
        (r, vec![m])
    }

    #[test]
    fn empty_input_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(&[], &[], dir.path()).unwrap();
        let text = fs::read_to_string(files.metrics).unwrap();
        assert_eq!(
            text,
            "scenario,method,success_rate,collision_rate,done_time_s,episodes\n"
        );
        assert!(files.plots.is_empty());
    }

    #[test]
    fn csv_and_trajectory_round_trip() {
        let (records, metrics) = two_episodes();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(&records, &metrics, dir.path()).unwrap();
        let rows = read_metrics_csv(&files.metrics).unwrap();
        let m = &metrics[0];
        assert_eq!(
            rows,
            vec![(
                m.scenario.clone(),
                m.method.clone(),
                m.success_rate,
                m.collision_rate,
                m.done_time,
                m.episodes
            )]
        );
        let back = read_trajectory(&files.trajectories[0]).unwrap();
        assert_eq!(back.ticks, records[0].ticks);
        assert_eq!(back.outcomes(), records[0].outcomes());
        let back_metrics = aggregate(
            &m.scenario,
            &m.method,
            &[back, read_trajectory(&files.trajectories[1]).unwrap()],
        );
        assert_eq!(&back_metrics, m);
    }

    #[test]
    fn svg_has_one_path_and_goal_per_robot() {
        let (records, _) = two_episodes();
        let svg = episode_svg(&records[0]);
        assert_eq!(svg.matches("class=\"path\"").count(), 4);
        assert_eq!(svg.matches("class=\"goal\"").count(), 4);
    }

    #[test]
    fn unwritable_destination_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, b"x").unwrap();
        assert!(emit_outputs(&[], &[], &file.join("out")).is_err());
    }
}
