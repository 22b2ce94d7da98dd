//! Training, greedy evaluation and parameter sweeps over seeded episodes.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentPool, Transition};
use crate::baselines::{on_policy, seg_policy, PolicyKind};
use crate::config::SimConfig;
use crate::env::{derive_seed, Environment, STATE_DIM};
use crate::error::{Result, SimError};
use crate::trace::{audit, EpisodeSummary, EpisodeTrace, Violation};

const PHASE_TRAIN: u64 = 11;
const PHASE_EVAL: u64 = 12;
const PHASE_AGENT: u64 = 13;

/// Environment seed of `episode` in a run phase.
fn episode_seed(run_seed: u64, phase: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(run_seed, phase), episode as u64)
}

pub fn train_episode_seed(run_seed: u64, episode: usize) -> u64 {
    episode_seed(run_seed, PHASE_TRAIN, episode)
}

pub fn eval_episode_seed(run_seed: u64, episode: usize) -> u64 {
    episode_seed(run_seed, PHASE_EVAL, episode)
}

pub fn agent_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, PHASE_AGENT)
}

/// Who chooses the actions of an episode.
pub enum Driver<'a> {
    /// Epsilon-greedy acting, experience storage and one learning step per slot.
    Learner(&'a mut AgentPool),
    Greedy(&'a AgentPool),
    Nearest,
    Seg {
        max_iters: usize,
    },
}

impl Driver<'_> {
    fn decide(&mut self, env: &Environment, states: &[Option<Vec<f64>>]) -> Result<Vec<Option<usize>>> {
        match self {
            Driver::Learner(pool) => states
                .iter()
                .enumerate()
                .map(|(n, s)| s.as_ref().map(|s| pool.agent_mut(n).act(s, true)).transpose())
                .collect(),
            Driver::Greedy(pool) => states
                .iter()
                .enumerate()
                .map(|(n, s)| s.as_ref().map(|s| pool.agent(n).greedy(s)).transpose())
                .collect(),
            Driver::Nearest => Ok(on_policy(env)),
            Driver::Seg { max_iters } => Ok(seg_policy(env, *max_iters)?.actions),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trace: EpisodeTrace,
    pub learn_steps: usize,
    pub losses: Vec<f64>,
    /// Wall-clock time of decisions plus slot execution, summed.
    pub busy: Duration,
    /// Longest per-task share of a slot's decision and execution time.
    pub max_task_latency: Duration,
}

/// Runs slots until every application has completed.
pub fn run_episode(env: &mut Environment, driver: &mut Driver<'_>, episode: usize) -> Result<EpisodeRun> {
    let mut trace = env.trace_shell(episode);
    let mut learn_steps = 0;
    let mut losses = Vec::new();
    let mut busy = Duration::ZERO;
    let mut max_task_latency = Duration::ZERO;
    let n_terms = env.terminals().len();
    while !env.is_done() {
        let states: Vec<Option<Vec<f64>>> = (0..n_terms).map(|n| env.observe(n)).collect();
        let started = Instant::now();
        let actions = driver.decide(env, &states)?;
        let out = env.step(&actions)?;
        let elapsed = started.elapsed();
        busy += elapsed;
        let active = actions.iter().flatten().count().max(1) as u32;
        max_task_latency = max_task_latency.max(elapsed / active);

        if let Driver::Learner(pool) = driver {
            for n in 0..n_terms {
                let (Some(state), Some(action), Some(reward)) = (&states[n], actions[n], out.rewards[n]) else {
                    continue;
                };
                let next_state = out.next_states[n].clone().unwrap_or_else(|| vec![0.0; STATE_DIM]);
                pool.agent_mut(n).remember(Transition {
                    state: state.clone(),
                    action,
                    reward,
                    next_state,
                    terminal: out.finished[n],
                });
            }
            let step_losses = pool.learn()?;
            learn_steps += step_losses.len();
            losses.extend(step_losses);
        }
        trace.slots.push(out.record);
    }
    if let Driver::Learner(pool) = driver {
        pool.end_episode();
    }
    Ok(EpisodeRun { trace, learn_steps, losses, busy, max_task_latency })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyKind,
    pub pool: AgentPool,
    /// Cumulative reward per training episode.
    pub episode_rewards: Vec<f64>,
    pub summaries: Vec<EpisodeSummary>,
    pub violations: Vec<Violation>,
    pub learn_steps: usize,
    pub elapsed: Duration,
}

/// Trains the agent behind `policy` for `episodes` episodes.
pub fn train(cfg: &SimConfig, policy: PolicyKind, episodes: usize, seed: u64) -> Result<TrainOutcome> {
    train_with(cfg, policy, episodes, seed, |_, _| {})
}

/// [`train`] with a per-episode callback `(episode, summary)`.
pub fn train_with<F>(
    cfg: &SimConfig,
    policy: PolicyKind,
    episodes: usize,
    seed: u64,
    mut progress: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &EpisodeSummary),
{
    let trained = policy
        .training_policy()
        .ok_or_else(|| SimError::Config(format!("policy {policy} has no learned component")))?;
    cfg.validate()?;
    let started = Instant::now();
    let mut pool = AgentPool::new(&cfg.agent, cfg.network.terminals, STATE_DIM, cfg.actions(), agent_seed(seed))?;
    let mut env = Environment::new(cfg.clone(), trained.env_options(), train_episode_seed(seed, 0))?;
    let mut episode_rewards = Vec::with_capacity(episodes);
    let mut summaries = Vec::with_capacity(episodes);
    let mut violations = Vec::new();
    let mut learn_steps = 0;
    for e in 0..episodes {
        env.reset(train_episode_seed(seed, e))?;
        let run = run_episode(&mut env, &mut Driver::Learner(&mut pool), e)?;
        violations.extend(audit(&run.trace));
        let summary = run.trace.summary()?;
        learn_steps += run.learn_steps;
        episode_rewards.push(summary.cumulative_reward);
        progress(e, &summary);
        summaries.push(summary);
    }
    Ok(TrainOutcome {
        policy: trained,
        pool,
        episode_rewards,
        summaries,
        violations,
        learn_steps,
        elapsed: started.elapsed(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub policy: PolicyKind,
    pub summaries: Vec<EpisodeSummary>,
    pub violations: Vec<Violation>,
    pub traces: Vec<EpisodeTrace>,
    /// Mean wall-clock decision plus execution time per task.
    pub mean_task_latency: Duration,
    pub max_task_latency: Duration,
}

impl EvalOutcome {
    pub fn mean_of(&self, f: impl Fn(&EpisodeSummary) -> f64) -> f64 {
        self.summaries.iter().map(f).sum::<f64>() / self.summaries.len().max(1) as f64
    }

    pub fn mean_cost(&self) -> f64 {
        self.mean_of(|s| s.mean_cost)
    }
}

/// Greedy evaluation of `policy` on the evaluation episodes of `seed`.
///
/// Learned policies need `pool`; baselines ignore it.
pub fn evaluate(
    cfg: &SimConfig,
    policy: PolicyKind,
    pool: Option<&AgentPool>,
    episodes: usize,
    seed: u64,
    keep_traces: bool,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let mut driver = match (policy, pool) {
        (PolicyKind::OnDca, _) => Driver::Nearest,
        (PolicyKind::SegDca, _) => Driver::Seg { max_iters: cfg.policy.seg_max_iters },
        (_, Some(pool)) => {
            let first = &pool.agents()[0].main;
            if first.actions() != cfg.actions() || first.state_dim() != STATE_DIM {
                return Err(SimError::Shape { expected: cfg.actions(), got: first.actions() });
            }
            Driver::Greedy(pool)
        }
        (_, None) => return Err(SimError::Config(format!("policy {policy} needs a trained agent"))),
    };
    let mut env = Environment::new(cfg.clone(), policy.env_options(), eval_episode_seed(seed, 0))?;
    let mut summaries = Vec::with_capacity(episodes);
    let mut violations = Vec::new();
    let mut traces = Vec::new();
    let mut busy = Duration::ZERO;
    let mut tasks = 0usize;
    let mut max_task_latency = Duration::ZERO;
    for e in 0..episodes {
        env.reset(eval_episode_seed(seed, e))?;
        let run = run_episode(&mut env, &mut driver, e)?;
        violations.extend(audit(&run.trace));
        let summary = run.trace.summary()?;
        busy += run.busy;
        tasks += summary.tasks;
        max_task_latency = max_task_latency.max(run.max_task_latency);
        summaries.push(summary);
        if keep_traces {
            traces.push(run.trace);
        }
    }
    Ok(EvalOutcome {
        policy,
        summaries,
        violations,
        traces,
        mean_task_latency: busy / tasks.max(1) as u32,
        max_task_latency,
    })
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub mean_cost: f64,
    pub tanh_cost: f64,
    pub objective14: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Retrain learned policies at every value; `None` decides by parameter.
    pub retrain: Option<bool>,
}

/// Parameters that change the reward or the action space need fresh agents.
pub fn requires_retraining(param: &str) -> bool {
    !matches!(param, "bandwidth" | "fm" | "server_freq" | "subchannels")
}

/// Agents trained for one seed, keyed by training policy and value index
/// (`None` for agents trained on the base configuration).
pub type AgentCache = HashMap<(PolicyKind, Option<usize>), AgentPool>;

/// Evaluates every (policy, value) pair for one seed.
pub fn sweep_seed(
    base: &SimConfig,
    spec: &SweepSpec,
    seed: u64,
    cache: &mut AgentCache,
) -> Result<(Vec<SweepRow>, Vec<Violation>)> {
    let retrain = spec.retrain.unwrap_or_else(|| requires_retraining(&spec.param));
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (vi, &value) in spec.values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.set_param(&spec.param, value)?;
        for &policy in &spec.policies {
            let pool = match policy.training_policy() {
                None => None,
                Some(trainer) => {
                    let key = (trainer, retrain.then_some(vi));
                    if let Entry::Vacant(slot) = cache.entry(key) {
                        let train_cfg = if retrain { &cfg } else { base };
                        let out = train(train_cfg, trainer, spec.train_episodes, seed)?;
                        violations.extend(out.violations);
                        slot.insert(out.pool);
                    }
                    cache.get(&key)
                }
            };
            let eval = evaluate(&cfg, policy, pool, spec.eval_episodes, seed, false)?;
            violations.extend(eval.violations.iter().cloned());
            let mean_cost = eval.mean_cost();
            rows.push(SweepRow {
                policy: policy.name().to_string(),
                param: spec.param.clone(),
                value,
                seed,
                mean_cost,
                tanh_cost: mean_cost.tanh(),
                objective14: eval.mean_of(|s| s.objective),
                mean_delay: eval.mean_of(|s| s.mean_delay),
                mean_energy: eval.mean_of(|s| s.mean_energy),
            });
        }
    }
    Ok((rows, violations))
}

/// Runs a sweep with seeds fanned out across worker threads.
pub fn run_sweep(base: &SimConfig, spec: &SweepSpec) -> Result<(Vec<SweepRow>, Vec<Violation>)> {
    let parts: Vec<(Vec<SweepRow>, Vec<Violation>)> = spec
        .seeds
        .par_iter()
        .map(|&seed| sweep_seed(base, spec, seed, &mut AgentCache::new()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (r, v) in parts {
        rows.extend(r);
        violations.extend(v);
    }
    Ok((rows, violations))
}

/// Mean of `rows` matching `policy` and `value`.
pub fn sweep_mean(rows: &[SweepRow], policy: &str, value: f64, f: impl Fn(&SweepRow) -> f64) -> Option<f64> {
    let hits: Vec<f64> = rows.iter().filter(|r| r.policy == policy && r.value == value).map(f).collect();
    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}
