use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modnet::composition::Architecture;
use modnet::sim::SimConfig;
use modnet::trainer::{train_grid, TrainHyper};
use modnet::universe::{RobotSpec, TaskKind, TaskSpec, Universe, World};
use modnet::Error;

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ablate-small.json")
}

fn modnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modnet")).args(args).output().unwrap()
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let config = small_config();
    let base = ["--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", "0"];
    modnet(&[&base[..], args].concat())
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(modnet(&["--help"]).status.code(), Some(0));
    assert_eq!(modnet(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(modnet(&["train", "--bogus"]).status.code(), Some(1));
    // Missing --config is a configuration error.
    assert_eq!(modnet(&["train"]).status.code(), Some(1));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(small_config()).unwrap().replacen("\"holdout\"", "\"hold_out\"", 1);
    std::fs::write(&path, text).unwrap();
    let out = modnet(&["--config", path.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_artifact_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["eval-zeroshot"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_eval_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [&["train"][..], &["eval-zeroshot"], &["dump-trajectory", "--split", "train"], &["export-expert"]] {
        let out = run_in(dir.path(), cmd);
        assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let seed = dir.path().join("seed-0");
    for f in ["weights.modnet", "curve.csv", "experts.modnet"] {
        assert!(seed.join(f).is_file(), "{f} missing");
    }
    let zeroshot = std::fs::read_to_string(dir.path().join("zeroshot.csv")).unwrap();
    let lines: Vec<&str> = zeroshot.lines().collect();
    assert_eq!(lines[0], "config_hash,seed,condition,ours,random_network,wrong_task_module");
    assert!(lines.last().unwrap().contains(",all,mean,"));
    let traj = std::fs::read_dir(&seed)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("traj_r2_k2_train_c"))
        .count();
    assert_eq!(traj, 2);

    let out = run_in(dir.path(), &["dump-trajectory", "--world", "r2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run_in(d.path(), &["--threads", "1", "train"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["weights.modnet", "curve.csv", "experts.modnet"] {
        let x = std::fs::read(a.path().join("seed-0").join(f)).unwrap();
        let y = std::fs::read(b.path().join("seed-0").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn unreachable_experts_abort_training() {
    let u = Universe::new(
        vec![RobotSpec::new("r1", vec![1.0, 1.0]), RobotSpec::new("r2", vec![0.7, 1.3])],
        vec![
            TaskSpec::new("k1", TaskKind::Reach { target_index: 0, num_targets: 2 }),
            TaskSpec::new("k2", TaskKind::Reach { target_index: 1, num_targets: 2 }),
        ],
    )
    .unwrap();
    let hyper = TrainHyper {
        conditions: 1,
        epochs: 1,
        sim: SimConfig {
            horizon: 3,
            ..SimConfig::default()
        },
        ..Default::default()
    };
    let worlds = u.held_out_split(&World::new("r2", "k2")).unwrap();
    match train_grid(&u, &worlds, &hyper, &Architecture::default(), 0) {
        Err(Error::ExpertGate(msg)) => {
            assert!(msg.contains("(r1, k1)") && msg.contains("limit"), "{msg}");
        }
        other => panic!("expected the expert gate to fire, got {:?}", other.map(|_| ())),
    }
}
