use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[env]
map = "handcrafted"
map_size = 12
obs_size = 8
max_steps = 20

[explore]
episodes = 3

[vq]
batch_size = 16
num_hiddens = 8
num_residual_hiddens = 4
num_residual_layers = 1
embedding_dim = 8
num_embeddings = 4
coord_hiddens = 8
steps = 3
log_interval = 1

[contrastive]
batch_size = 8
embedding_dim = 8
num_hiddens = 8
steps = 3
num_skills = 4
kmeans_restarts = 2
kmeans_iters = 5
log_interval = 1

[agent]
batch_size = 8
hidden = 16
total_frames = 300
replay_capacity = 1000
replay_start = 50
final_exploration_frames = 200
target_update_interval = 40

[eval]
episodes_per_skill = 1
final_window = 5
"#;

fn skillgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillgrid")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(cmd: &str, cfg: &Path, run: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap(), "--seed", "7"];
    args.extend_from_slice(extra);
    let o = skillgrid(&args);
    assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
}

#[test]
fn explore_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("explore", &cfg, &a, &[]);
    run_ok("explore", &cfg, &b, &[]);
    assert_eq!(std::fs::read(a.join("dataset.skld")).unwrap(), std::fs::read(b.join("dataset.skld")).unwrap());
}

#[test]
fn missing_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = skillgrid(&["explore", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("config not found"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn render_without_checkpoint_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    let o = skillgrid(&["render", "--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint required"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(skillgrid(&["fly"]).status.code(), Some(2));
    assert_eq!(skillgrid(&["explore", "--bogus"]).status.code(), Some(2));
    assert_eq!(skillgrid(&["explore", "--backend", "pca"]).status.code(), Some(2));
    assert_eq!(skillgrid(&[]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    std::fs::write(&p, "[env]\nobs_size = 12\n").unwrap();
    let o = skillgrid(&["explore", "--config", p.to_str().unwrap(), "--run-dir", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("configuration error"));
}

#[test]
fn config_snapshot_is_immutable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    run_ok("explore", &cfg, &run, &[]);
    let snap = std::fs::read(run.join("config.toml")).unwrap();
    let o = skillgrid(&["explore", "--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap(), "--coords", "on"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read(run.join("config.toml")).unwrap(), snap);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run = tmp.path().join("run");
    run_ok("explore", &cfg, &run, &[]);
    run_ok("discover-vq", &cfg, &run, &[]);
    run_ok("discover-contrastive", &cfg, &run, &[]);
    for b in ["vq", "contrastive"] {
        run_ok("train-skills", &cfg, &run, &["--backend", b]);
        run_ok("evaluate", &cfg, &run, &["--backend", b]);
        run_ok("render", &cfg, &run, &["--backend", b]);
    }
    for f in [
        "config.toml",
        "map.txt",
        "dataset.skld",
        "vq.nnck",
        "contrastive.nnck",
        "policy_vq.nnck",
        "policy_contrastive.nnck",
        "logs/vq_log.csv",
        "logs/contrastive_log.csv",
        "logs/train_log_vq.csv",
        "logs/eval_rewards_contrastive.csv",
        "figures/index_map_vq.ppm",
        "figures/index_map_contrastive_n.ppm",
        "figures/reward_vq_k3.ppm",
        "figures/trajectories_contrastive_k0.ppm",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("logs/train_log_vq.csv")).unwrap();
    assert!(log.starts_with("frame,episode,skill,return,loss,epsilon\n"));
    let curves = std::fs::read_to_string(run.join("logs/eval_rewards_vq.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4 * 20);
}
