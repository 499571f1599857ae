use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn safenav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safenav")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files_under(a), files_under(b));
    assert_eq!(fa, fb);
    for f in fa {
        if f.file_name().unwrap() == "effective_config.toml" {
            continue;
        }
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{}",
            f.display()
        );
    }
}

const TINY_TRAIN: &str = "[train]
epochs = 2
steps_per_epoch = 15
warmup_steps = 15
static_epochs = 1
population = 4
hidden = 4
eval_episodes = 1
";

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = safenav(&[
            "simulate",
            "--seed",
            "3",
            "--episodes",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    same_tree(&a, &b);
    assert_eq!(files_under(&a.join("trajectories")).len(), 2);
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = safenav(&[
        "simulate",
        "--seed",
        "5",
        "--scenario",
        "dense_4",
        "--refine",
        "off",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let dump = a.join("effective_config.toml");
    let text = fs::read_to_string(&dump).unwrap();
    assert!(text.contains("seed = 5") && text.contains("dense_4") && text.contains("refine = false"));
    let b = dir.path().join("b");
    let o = safenav(&[
        "simulate",
        "--config",
        dump.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    same_tree(&a, &b);
}

#[test]
fn evaluate_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let o = safenav(&[
        "evaluate",
        "--scenario",
        "sparse_4,dense_4",
        "--episodes",
        "2",
        "--refine",
        "on",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "scenario,method,success_rate,collision_rate,done_time_s,episodes"
    );
    assert!(lines[1].starts_with("sparse_4,nominal+refine-flow,") && lines[2].starts_with("dense_4,"));
    assert!(!out.join("trajectories").exists());
}

#[test]
fn validation_errors_exit_1_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = |args: &[&str]| {
        let mut v = args.to_vec();
        v.extend(["--out", out.to_str().unwrap()]);
        safenav(&v)
    };
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "episodez = 3\n").unwrap();
    let cases = [
        o(&["train", "--config", "missing.toml-like-path"]),
        o(&["simulate", "--config", bad_cfg.to_str().unwrap()]),
        o(&["simulate", "--scenario", "nowhere_9"]),
        o(&["simulate", "--episodes", "0"]),
        o(&["simulate", "--policy", "no_policy.json"]),
        o(&["simulate", "--refine", "sometimes"]),
        o(&["frobnicate"]),
        o(&["simulate", "--bogus-flag"]),
        o(&["plot"]),
    ];
    for c in &cases {
        assert_eq!(code(c), 1, "{}", String::from_utf8_lossy(&c.stderr));
        assert!(!c.stderr.is_empty());
    }
    assert!(!out.exists());
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_safenav"))
            .args(["check", "--out", out.to_str().unwrap()])
            .env("SAFENAV_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("zero")), 1);
    assert_eq!(code(&run("0")), 1);
    assert_eq!(code(&run("1")), 0);
}

#[test]
fn check_battery_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = safenav(&["check", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all 6 checks passed"), "{stdout}");
}

#[test]
fn train_then_simulate_with_the_trained_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TINY_TRAIN).unwrap();
    let out = dir.path().join("train");
    let o = safenav(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "effective_config.toml",
        "train_log.csv",
        "policy.json",
        "predictor.json",
        "dataset.bin",
        "metrics.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,success_rate,collision_rate,mean_return,pred_error,wall_time_s"));
    assert_eq!(log.lines().count(), 3);

    let sim = dir.path().join("sim");
    let policy = out.join("policy.json");
    let o = safenav(&[
        "simulate",
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        sim.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(sim.join("metrics.csv")).unwrap();
    assert!(csv.contains("mlp+refine-flow"), "{csv}");
}

#[test]
fn train_rejects_several_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = safenav(&[
        "train",
        "--scenario",
        "sparse_4,dense_4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn plot_rerenders_identical_svgs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        code(&safenav(&[
            "simulate",
            "--episodes",
            "2",
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let plots = out.join("plots");
    let before: Vec<(PathBuf, Vec<u8>)> = files_under(&plots)
        .into_iter()
        .map(|f| (f.clone(), fs::read(plots.join(&f)).unwrap()))
        .collect();
    fs::remove_dir_all(&plots).unwrap();
    let o = safenav(&["plot", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for (f, bytes) in before {
        assert_eq!(fs::read(plots.join(&f)).unwrap(), bytes, "{}", f.display());
    }
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&safenav(&["--help"])), 0);
    assert_eq!(code(&safenav(&["--version"])), 0);
    assert_eq!(code(&safenav(&["simulate", "--help"])), 0);
}
