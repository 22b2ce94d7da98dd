use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mecsim::agent::checkpoint;
use mecsim::baselines::PolicyKind;
use mecsim::config::SimConfig;
use mecsim::experiment::{evaluate, run_sweep, train_with, SweepSpec};
use mecsim::report::{self, RewardRow};
use mecsim::{selftest, trace};

#[derive(Parser)]
#[command(name = "mecsim", version, about = "Multi-cell edge offloading simulator and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (sectioned key = value); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single run seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `N..M` (both ends included) or comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write its checkpoint and reward curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// toica or dto-random.
        #[arg(long, default_value = "toica")]
        policy: String,
    },
    /// Run greedy evaluation episodes and write their trace.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value = "toica")]
        policy: String,
        /// Checkpoint to load; defaults to `<out>/checkpoint.txt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate policies over a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// bandwidth, fm, omega, subchannels, servers, terminals, tasks or learning_rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Comma-separated policies.
        #[arg(long, alias = "policies", default_value = "toica,on-dca,seg-dca,toica-ra,dto-random")]
        policy: String,
        /// Training episodes per learned agent.
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 200)]
        eval_episodes: usize,
        /// Force retraining at every value (default decided by parameter).
        #[arg(long)]
        retrain: Option<bool>,
    },
    /// Knapsack solver and gradient self-checks.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_seeds(common: &Common) -> Result<Vec<u64>> {
    if let Some(s) = common.seed {
        return Ok(vec![s]);
    }
    let Some(spec) = &common.seeds else {
        return Ok(vec![1]);
    };
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim_start_matches('=').trim().parse().context("seed range end")?;
        if b < a {
            bail!("empty seed range {spec}");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`"))).collect()
}

fn load_config(common: &Common) -> Result<SimConfig> {
    match &common.config {
        Some(p) => Ok(SimConfig::load(p)?),
        None => Ok(SimConfig::default()),
    }
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(|s| Ok(s.parse::<PolicyKind>()?)).collect()
}

fn parse_values(list: &str) -> Result<Vec<f64>> {
    list.split(',').map(|s| s.trim().parse::<f64>().with_context(|| format!("bad value `{s}`"))).collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn checkpoint_name(seed: u64, seeds: &[u64]) -> String {
    if seeds.len() == 1 {
        "checkpoint.txt".to_string()
    } else {
        format!("checkpoint-seed{seed}.txt")
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, episodes, policy } => {
            let cfg = load_config(&common)?;
            let seeds = parse_seeds(&common)?;
            let policy: PolicyKind = policy.parse()?;
            fs::create_dir_all(&common.out)?;
            let mut rows = Vec::new();
            for &seed in &seeds {
                let out = train_with(&cfg, policy, episodes, seed, |e, s| {
                    if (e + 1) % 100 == 0 {
                        eprintln!("seed {seed} episode {}: cumulative reward {:.4}", e + 1, s.cumulative_reward);
                    }
                })?;
                if !out.violations.is_empty() {
                    bail!("{} constraint violations during training", out.violations.len());
                }
                eprintln!("seed {seed}: {} learning steps in {:.1?}", out.learn_steps, out.elapsed);
                checkpoint::save(&out.pool, &common.out.join(checkpoint_name(seed, &seeds)))?;
                rows.extend(out.episode_rewards.iter().enumerate().map(|(e, &r)| RewardRow {
                    episode: e,
                    seed,
                    cumulative_reward: r,
                }));
            }
            report::write_rewards_csv(&rows, create(&common.out, "rewards.csv")?)?;
            fs::write(common.out.join("chart.svg"), report::reward_chart(&rows, 10)?)?;
            let extra = [("policy", policy.to_string()), ("episodes", episodes.to_string())];
            fs::write(common.out.join("manifest.txt"), report::manifest("train", &cfg, &seeds, &extra))?;
            println!("wrote {}", common.out.display());
        }
        Command::Eval { common, episodes, policy, checkpoint: ckpt } => {
            let cfg = load_config(&common)?;
            let seeds = parse_seeds(&common)?;
            let policy: PolicyKind = policy.parse()?;
            fs::create_dir_all(&common.out)?;
            let mut traces = Vec::new();
            for &seed in &seeds {
                let pool = if policy.is_learned() {
                    let path = ckpt.clone().unwrap_or_else(|| common.out.join(checkpoint_name(seed, &seeds)));
                    Some(checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?)
                } else {
                    None
                };
                let out = evaluate(&cfg, policy, pool.as_ref(), episodes, seed, true)?;
                if !out.violations.is_empty() {
                    bail!("{} constraint violations during evaluation", out.violations.len());
                }
                let cost = out.mean_cost();
                println!(
                    "seed {seed} policy {policy}: mean cost {cost:.6} (tanh {:.6}), objective {:.6}, mean delay {:.6} s, mean energy {:.6} J, latency {:.3?}/task",
                    cost.tanh(),
                    out.mean_of(|s| s.objective),
                    out.mean_of(|s| s.mean_delay),
                    out.mean_of(|s| s.mean_energy),
                    out.mean_task_latency
                );
                traces.extend(out.traces);
            }
            trace::write_trace_csv(&traces, create(&common.out, "trace.csv")?)?;
            let extra = [("policy", policy.to_string()), ("episodes", episodes.to_string())];
            fs::write(common.out.join("manifest.txt"), report::manifest("eval", &cfg, &seeds, &extra))?;
        }
        Command::Sweep { common, param, values, policy, episodes, eval_episodes, retrain } => {
            let cfg = load_config(&common)?;
            let spec = SweepSpec {
                param,
                values: parse_values(&values)?,
                policies: parse_policies(&policy)?,
                seeds: parse_seeds(&common)?,
                train_episodes: episodes,
                eval_episodes,
                retrain,
            };
            fs::create_dir_all(&common.out)?;
            let (rows, violations) = run_sweep(&cfg, &spec)?;
            if !violations.is_empty() {
                bail!("{} constraint violations during the sweep", violations.len());
            }
            report::write_sweep_csv(&rows, create(&common.out, "sweep.csv")?)?;
            fs::write(common.out.join("chart.svg"), report::sweep_chart(&rows)?)?;
            for p in report::aggregate_sweep(&rows)? {
                println!(
                    "{:<11} {} = {:<10} mean cost {:.6} ± {:.6}",
                    p.policy, spec.param, p.value, p.mean_cost, p.std_cost
                );
            }
            let extra = [
                ("param", spec.param.clone()),
                ("values", values),
                ("policies", policy),
                ("train_episodes", episodes.to_string()),
                ("eval_episodes", eval_episodes.to_string()),
            ];
            fs::write(common.out.join("manifest.txt"), report::manifest("sweep", &cfg, &spec.seeds, &extra))?;
        }
        Command::Selftest { instances, seed } => {
            let r = selftest::run(instances, seed)?;
            println!(
                "knapsack: {} of {} instances match exhaustive search",
                r.gkp_instances - r.gkp_mismatches,
                r.gkp_instances
            );
            println!("gradient: max relative error {:.3e}", r.gradient_max_rel_err);
            if !r.passed() {
                bail!("selftest failed");
            }
            println!("selftest passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
