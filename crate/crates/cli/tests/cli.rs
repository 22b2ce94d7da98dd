use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[network]
terminals = 3
servers = 2
subchannels = 4

[dag]
n_tasks = 5
layers = 2

[agent]
hidden = [16, 16]
batch_size = 8
";

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mecsim-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    dir
}

fn mecsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mecsim")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn training_twice_writes_identical_rewards() {
    let dir = workdir("train");
    for out in ["a", "b"] {
        ok(&mecsim(&dir, &["train", "--config", "small.toml", "--seed", "7", "--episodes", "12", "--out", out]));
    }
    let a = fs::read_to_string(dir.join("a/rewards.csv")).unwrap();
    let b = fs::read_to_string(dir.join("b/rewards.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 13);
    assert!(a.starts_with("episode,seed,cumulative_reward"));
    for f in ["checkpoint.txt", "chart.svg", "manifest.txt"] {
        assert!(dir.join("a").join(f).exists(), "{f} missing");
    }
    let manifest = fs::read_to_string(dir.join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seeds"));

    let eval = ok(&mecsim(&dir, &["eval", "--config", "small.toml", "--seed", "7", "--episodes", "3", "--out", "a"]));
    assert!(eval.contains("mean cost"));
    let trace = fs::read_to_string(dir.join("a/trace.csv")).unwrap();
    assert!(trace
        .starts_with("episode,slot,terminal,task,action,channels_assigned,d_tr,d_co,d_total,energy,reward,cost,D_t"));
    assert_eq!(trace.lines().count(), 1 + 3 * 3 * 5);
}

#[test]
fn evaluating_a_learned_policy_without_checkpoint_fails() {
    let dir = workdir("nockpt");
    let out = mecsim(&dir, &["eval", "--config", "small.toml", "--episodes", "2", "--out", "empty"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn heuristic_evaluation_needs_no_checkpoint() {
    let dir = workdir("heuristic");
    let out = ok(&mecsim(
        &dir,
        &["eval", "--config", "small.toml", "--policy", "on-dca", "--seeds", "1..2", "--episodes", "2"],
    ));
    assert_eq!(out.lines().filter(|l| l.contains("policy on-dca")).count(), 2);
}

#[test]
fn sweep_writes_one_row_per_policy_value_and_seed() {
    let dir = workdir("sweep");
    ok(&mecsim(
        &dir,
        &[
            "sweep",
            "--config",
            "small.toml",
            "--param",
            "bandwidth",
            "--values",
            "30e6,60e6",
            "--policies",
            "toica,on-dca",
            "--seeds",
            "1,2",
            "--episodes",
            "4",
            "--eval-episodes",
            "2",
        ],
    ));
    let csv = fs::read_to_string(dir.join("out/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "policy,param,value,seed,mean_cost,tanh_cost,objective14,mean_delay,mean_energy");
    assert_eq!(lines.count(), 2 * 2 * 2);
    assert!(dir.join("out/chart.svg").exists());
}

#[test]
fn bad_arguments_exit_nonzero() {
    let dir = workdir("bad");
    assert!(!mecsim(&dir, &["train", "--policy", "nonsense", "--episodes", "1"]).status.success());
    assert!(!mecsim(&dir, &["sweep", "--param", "colour", "--values", "1", "--episodes", "1"]).status.success());
    assert!(!mecsim(&dir, &["train", "--config", "missing.toml"]).status.success());
}

#[test]
fn selftest_passes() {
    let dir = workdir("selftest");
    let out = ok(&mecsim(&dir, &["selftest", "--instances", "200"]));
    assert!(out.contains("selftest passed"));
}
