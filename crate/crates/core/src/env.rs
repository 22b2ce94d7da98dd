//! Slotted multi-cell environment: one queue-head task per terminal and slot,
//! per-cell channel allocation, interference-coupled rates and realized costs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{random_composition, random_priority};
use crate::config::{AdmissionRule, SimConfig};
use crate::cost::{edge_compute_time, edge_energy, tradeoff_cost, CostBreakdown, Mode};
use crate::dag::{ready_time, AppDag, BITS_PER_KB};
use crate::dca::{estimate_values, materialize, solve_gkp, AllocationMatrix};
use crate::error::{Result, SimError};
use crate::priority::{compute_priorities, estimate_task_cost, PriorityTable};
use crate::radio::{
    channel_gain, comm_time, estimated_rate, interference_at, step_mobility, uplink_rate, ChannelRealization, Mobility,
    Position, RadioConfig, ServerState, TerminalState, Transmitter,
};
use crate::trace::{CellRecord, EpisodeTrace, SlotRecord, TaskRecord};

/// Observation length: planar position, data volume and cycle count.
pub const STATE_DIM: usize = 4;

/// Largest double below one; keeps saturated `tanh` values inside (-1, 1).
pub const REWARD_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

const STREAM_SCENARIO: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_ALLOCATION: u64 = 3;
const STREAM_FADING: u64 = 4;
const STREAM_MOBILITY: u64 = 5;

/// SplitMix64 finalizer over `base` and a stream label.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How a cell splits its subchannels among admitted offloaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationRule {
    Dca,
    Random,
}

/// Source of each terminal's task sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingRule {
    Priority,
    RandomTopological,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvOptions {
    pub allocation: AllocationRule,
    pub ordering: OrderingRule,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self { allocation: AllocationRule::Dca, ordering: OrderingRule::Priority }
    }
}

/// A terminal with its application and execution progress.
#[derive(Debug, Clone)]
pub struct Terminal {
    pub state: TerminalState,
    pub dag: AppDag,
    pub priorities: PriorityTable,
    /// Execution sequence; always a topological order of `dag`.
    pub order: Vec<usize>,
    cursor: usize,
    finish: Vec<Option<f64>>,
}

impl Terminal {
    /// Task waiting at the head of the queue.
    pub fn head(&self) -> Option<usize> {
        self.order.get(self.cursor).copied()
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.order.len()
    }

    pub fn finish_times(&self) -> &[Option<f64>] {
        &self.finish
    }
}

/// Result of one slot.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub record: SlotRecord,
    /// Reward per terminal; `None` for idle terminals.
    pub rewards: Vec<Option<f64>>,
    /// Observation after the slot; `None` once the terminal has finished.
    pub next_states: Vec<Option<Vec<f64>>>,
    /// Terminals whose last task completed in this slot.
    pub finished: Vec<bool>,
    /// Every application has completed.
    pub done: bool,
}

fn server_layout(cfg: &SimConfig) -> Vec<ServerState> {
    let m = cfg.network.servers;
    (0..m)
        .map(|i| {
            let position = if m == 1 {
                Position::ORIGIN
            } else {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                let r = cfg.network.server_ring_radius;
                Position::new(r * theta.cos(), r * theta.sin())
            };
            ServerState { position, cpu_freq: cfg.compute.server_freq, degradation: cfg.compute.degradation }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Environment {
    cfg: SimConfig,
    radio: RadioConfig,
    mobility: Mobility,
    servers: Vec<ServerState>,
    options: EnvOptions,
    terminals: Vec<Terminal>,
    slot: usize,
    clock: f64,
    seed: u64,
    alloc_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
}

impl Environment {
    /// Builds the environment and resets it with `seed`.
    pub fn new(cfg: SimConfig, options: EnvOptions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = Self {
            radio: cfg.radio_config()?,
            mobility: cfg.mobility(),
            servers: server_layout(&cfg),
            cfg,
            options,
            terminals: Vec::new(),
            slot: 0,
            clock: 0.0,
            seed,
            alloc_rng: ChaCha8Rng::seed_from_u64(0),
            fading_rng: ChaCha8Rng::seed_from_u64(0),
            mobility_rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(seed)?;
        Ok(env)
    }

    /// Fresh applications, terminal parameters and positions for `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        let mut scenario = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SCENARIO));
        let mut ordering = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ORDER));
        let c = &self.cfg.compute;
        let omega = self.cfg.policy.omega;
        let mut terminals = Vec::with_capacity(self.cfg.network.terminals);
        for n in 0..self.cfg.network.terminals {
            let dag = self.cfg.dag.generate(n, &mut scenario)?;
            let state = TerminalState {
                position: Position::uniform_in_disk(self.cfg.network.arena_radius, &mut scenario),
                cpu_freq: scenario.random_range(c.terminal_freq_min..=c.terminal_freq_max),
                tx_power: scenario.random_range(c.tx_power_min..=c.tx_power_max),
                static_power: c.static_power,
                kappa: c.kappa,
            };
            let est = dag
                .tasks()
                .iter()
                .map(|t| estimate_task_cost(t, &state, &self.servers, &self.radio, omega))
                .collect::<Result<Vec<_>>>()?;
            let priorities = compute_priorities(&dag, &est)?;
            let order = match self.options.ordering {
                OrderingRule::Priority => priorities.order.clone(),
                OrderingRule::RandomTopological => random_priority(&dag, &mut ordering)?,
            };
            terminals.push(Terminal { finish: vec![None; dag.len()], state, dag, priorities, order, cursor: 0 });
        }
        self.terminals = terminals;
        self.slot = 0;
        self.clock = 0.0;
        self.seed = seed;
        self.alloc_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ALLOCATION));
        self.fading_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FADING));
        self.mobility_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MOBILITY));
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn radio(&self) -> &RadioConfig {
        &self.radio
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn terminals(&self) -> &[Terminal] {
        &self.terminals
    }

    pub fn options(&self) -> EnvOptions {
        self.options
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        self.terminals.iter().all(Terminal::is_done)
    }

    /// Normalized observation of terminal `n`, `None` once it has finished.
    pub fn observe(&self, n: usize) -> Option<Vec<f64>> {
        let t = &self.terminals[n];
        let task = t.dag.task(t.head()?);
        Some(self.encode(&t.state.position, task.bits, task.cycles))
    }

    fn encode(&self, p: &Position, bits: f64, cycles: f64) -> Vec<f64> {
        let r = self.cfg.network.arena_radius;
        let b_max = self.cfg.dag.kb_max * BITS_PER_KB;
        let c_max = self.cfg.dag.mcycles_max * 1e6;
        vec![p.x / r, p.y / r, bits / b_max, cycles / c_max]
    }

    /// Hypothetical local cost of terminal `n`'s head task.
    pub fn head_local_cost(&self, n: usize) -> Option<f64> {
        let t = &self.terminals[n];
        let task = t.dag.task(t.head()?);
        Some(CostBreakdown::local(task.cycles, t.state.cpu_freq, t.state.kappa, self.cfg.policy.omega).total())
    }

    /// Interference-free estimate of offloading terminal `n`'s head task to
    /// `server` with `channels` subchannels and `occupancy` tasks on the server.
    pub fn head_edge_estimate(
        &self,
        n: usize,
        server: usize,
        channels: usize,
        occupancy: usize,
    ) -> Option<Result<f64>> {
        let t = &self.terminals[n];
        let task = t.dag.task(t.head()?);
        let s = &self.servers[server];
        let est = || -> Result<f64> {
            let rate =
                estimated_rate(channels as f64, t.state.tx_power, t.state.position.distance(&s.position), &self.radio);
            let d_tr = comm_time(task.bits, rate)?;
            let d_co = edge_compute_time(task.cycles, s.cpu_freq, occupancy, s.degradation)?;
            let e = edge_energy(t.state.tx_power, d_tr, t.state.static_power, d_co);
            Ok(tradeoff_cost(d_tr + d_co, e, self.cfg.policy.omega))
        };
        Some(est())
    }

    /// Empty trace carrying this episode's applications.
    pub fn trace_shell(&self, episode: usize) -> EpisodeTrace {
        EpisodeTrace {
            episode,
            seed: self.seed,
            omega: self.cfg.policy.omega,
            subchannels: self.cfg.network.subchannels,
            servers: self.servers.len(),
            dags: self.terminals.iter().map(|t| t.dag.clone()).collect(),
            slots: Vec::new(),
        }
    }

    /// Allocation counts for the admitted members of one cell.
    fn allocate(&mut self, server: usize, members: &[usize]) -> Result<AllocationMatrix> {
        let k = self.radio.subchannels;
        let counts = match self.options.allocation {
            AllocationRule::Dca => {
                let s = self.servers[server].position;
                let mut bits = Vec::with_capacity(members.len());
                let mut power = Vec::with_capacity(members.len());
                let mut dist = Vec::with_capacity(members.len());
                for &n in members {
                    let t = &self.terminals[n];
                    bits.push(t.dag.task(t.head().expect("member has a task")).bits);
                    power.push(t.state.tx_power);
                    dist.push(t.state.position.distance(&s));
                }
                let inst = estimate_values(&bits, &power, &dist, &self.radio, self.cfg.policy.omega)?;
                solve_gkp(&inst)?.counts
            }
            AllocationRule::Random => random_composition(k, members.len(), &mut self.alloc_rng)?,
        };
        materialize(&counts, k, &mut self.alloc_rng)
    }

    /// Executes one slot. `actions[n]` must be `Some` exactly for terminals
    /// with a pending task.
    pub fn step(&mut self, actions: &[Option<usize>]) -> Result<StepOutcome> {
        let n_terms = self.terminals.len();
        if actions.len() != n_terms {
            return Err(SimError::Protocol(format!("{} actions for {n_terms} terminals", actions.len())));
        }
        let m_servers = self.servers.len();
        let k = self.radio.subchannels;
        let omega = self.cfg.policy.omega;

        let mut requested: Vec<Option<Mode>> = vec![None; n_terms];
        for (n, a) in actions.iter().enumerate() {
            match (a, self.terminals[n].head()) {
                (Some(a), Some(_)) if *a <= m_servers => requested[n] = Some(Mode::from_action(*a)),
                (Some(a), Some(_)) => return Err(SimError::Protocol(format!("action {a} outside 0..={m_servers}"))),
                (Some(_), None) => return Err(SimError::Protocol(format!("terminal {n} has no pending task"))),
                (None, Some(_)) => return Err(SimError::Protocol(format!("terminal {n} needs an action"))),
                (None, None) => {}
            }
        }

        // admission: at most K offloaders per cell, highest head-task priority first
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); m_servers];
        for (n, mode) in requested.iter().enumerate() {
            if let Some(Mode::Edge(m)) = mode {
                members[*m].push(n);
            }
        }
        let mut admitted = vec![true; n_terms];
        for cell in &mut members {
            if cell.len() > k {
                match self.cfg.policy.admission {
                    AdmissionRule::Priority => {
                        let prio = |n: usize| {
                            let t = &self.terminals[n];
                            t.priorities.priority[t.head().expect("offloader has a task")]
                        };
                        cell.sort_by(|&a, &b| prio(b).total_cmp(&prio(a)).then(a.cmp(&b)));
                    }
                }
                for &n in &cell[k..] {
                    admitted[n] = false;
                }
                cell.truncate(k);
                cell.sort_unstable();
            }
        }

        let mut cells = Vec::new();
        let mut transmitters = Vec::new();
        for (m, cell) in members.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let allocation = self.allocate(m, cell)?;
            for (&n, row) in cell.iter().zip(&allocation.rows) {
                transmitters.push(Transmitter {
                    terminal: n,
                    cell: m,
                    position: self.terminals[n].state.position,
                    tx_power: self.terminals[n].state.tx_power,
                    row: row.clone(),
                });
            }
            cells.push(CellRecord { server: m, members: cell.clone(), allocation });
        }

        let fading = ChannelRealization::draw(self.slot, k, &mut self.fading_rng);
        let alpha = self.radio.path_loss_exp;

        let mut tasks = Vec::new();
        let mut rewards = vec![None; n_terms];
        for n in 0..n_terms {
            let Some(mode) = requested[n] else { continue };
            let t = &self.terminals[n];
            let task_idx = t.head().expect("checked above");
            let task = *t.dag.task(task_idx);
            let local = CostBreakdown::local(task.cycles, t.state.cpu_freq, t.state.kappa, omega);
            let (realized, channels) = match transmitters.iter().find(|tx| tx.terminal == n) {
                Some(tx) => {
                    let server = &self.servers[tx.cell];
                    let dist = tx.position.distance(&server.position);
                    let gains: Vec<f64> = fading.fading.iter().map(|&f| channel_gain(f, dist, alpha)).collect();
                    let interference: Vec<f64> = (0..k)
                        .map(|ch| interference_at(tx.cell, &server.position, ch, &transmitters, &fading, alpha))
                        .collect();
                    let rate = uplink_rate(&tx.row, tx.tx_power, &gains, &interference, &self.radio)?;
                    let d_tr = comm_time(task.bits, rate)?;
                    let cost = CostBreakdown::edge(
                        tx.cell,
                        d_tr,
                        task.cycles,
                        server.cpu_freq,
                        members[tx.cell].len(),
                        server.degradation,
                        tx.tx_power,
                        t.state.static_power,
                        omega,
                    )?;
                    let channels = tx.row.iter().enumerate().filter(|(_, &x)| x).map(|(ch, _)| ch).collect();
                    (cost, channels)
                }
                None => (local, Vec::new()),
            };
            let reward = match realized.mode() {
                Mode::Local => 0.0,
                Mode::Edge(_) => (local.total() - realized.total()).tanh().clamp(-REWARD_LIMIT, REWARD_LIMIT),
            };
            if !reward.is_finite() {
                return Err(SimError::NumericalFailure);
            }
            let ready = ready_time(&t.dag, &t.finish, task_idx)?;
            rewards[n] = Some(reward);
            tasks.push(TaskRecord {
                terminal: n,
                task: task_idx,
                action: mode.action(),
                mode: realized.mode(),
                admitted: admitted[n],
                channels,
                d_tr: realized.d_tr(),
                d_co: realized.d_co(),
                delay: realized.delay(),
                energy: realized.energy(),
                cost: realized.total(),
                local_cost: local.total(),
                reward,
                priority: t.priorities.priority[task_idx],
                ready_time: ready,
                finish_time: ready + realized.delay(),
            });
        }

        let duration = tasks.iter().map(|t| t.delay).fold(0.0, f64::max);
        let record = SlotRecord { slot: self.slot, start: self.clock, duration, tasks, cells };

        let mut finished = vec![false; n_terms];
        for rec in &record.tasks {
            let t = &mut self.terminals[rec.terminal];
            t.finish[rec.task] = Some(rec.finish_time);
            t.cursor += 1;
            finished[rec.terminal] = t.is_done();
        }
        for t in &mut self.terminals {
            t.state = step_mobility(&t.state, duration, &self.mobility, &mut self.mobility_rng);
        }
        self.clock += duration;
        self.slot += 1;

        let next_states = (0..n_terms).map(|n| self.observe(n)).collect();
        Ok(StepOutcome { record, rewards, next_states, finished, done: self.is_done() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(terminals: usize, servers: usize, tasks: usize) -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.network.terminals = terminals;
        cfg.network.servers = servers;
        cfg.dag.n_tasks = tasks;
        cfg.dag.layers = tasks.min(5);
        cfg
    }

    #[test]
    fn reset_is_deterministic_and_queues_start_at_the_top() {
        let a = Environment::new(SimConfig::default(), EnvOptions::default(), 5).unwrap();
        let b = Environment::new(SimConfig::default(), EnvOptions::default(), 5).unwrap();
        for (x, y) in a.terminals().iter().zip(b.terminals()) {
            assert_eq!(x.dag, y.dag);
            assert_eq!(x.state, y.state);
            assert_eq!(x.order, y.order);
        }
        for t in a.terminals() {
            let head = t.head().unwrap();
            assert!(t.dag.is_entry(head));
            let top = t.priorities.priority.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(t.priorities.priority[head], top);
            assert!(t.dag.is_topological(&t.order));
            assert!(t.state.position.norm() <= 500.0);
        }
        let c = Environment::new(SimConfig::default(), EnvOptions::default(), 6).unwrap();
        assert_ne!(a.terminals()[0].dag, c.terminals()[0].dag);
    }

    #[test]
    fn smallest_environment() {
        let env = Environment::new(small_cfg(1, 1, 4), EnvOptions::default(), 1).unwrap();
        assert_eq!(env.terminals().len(), 1);
        assert_eq!(env.terminals()[0].remaining(), 4);
        assert_eq!(env.servers()[0].position, Position::ORIGIN);
        let s = env.observe(0).unwrap();
        assert_eq!(s.len(), STATE_DIM);
        assert!(s[..2].iter().all(|v| v.abs() <= 1.0));
        assert!(s[2..].iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn all_local_slot_has_zero_rewards_and_no_allocation() {
        let mut env = Environment::new(SimConfig::default(), EnvOptions::default(), 2).unwrap();
        let out = env.step(&[Some(0); 5]).unwrap();
        assert!(out.rewards.iter().all(|r| *r == Some(0.0)));
        assert!(out.record.cells.is_empty());
        let longest = out.record.tasks.iter().map(|t| t.delay).fold(0.0, f64::max);
        assert_eq!(out.record.duration, longest);
        assert_eq!(env.clock(), longest);
    }

    #[test]
    fn lone_offloader_takes_every_channel() {
        let mut env = Environment::new(SimConfig::default(), EnvOptions::default(), 3).unwrap();
        let out = env.step(&[Some(2), Some(0), Some(0), Some(0), Some(0)]).unwrap();
        assert_eq!(out.record.cells.len(), 1);
        assert_eq!(out.record.cells[0].allocation.row_sums(), vec![8]);
        let rec = &out.record.tasks[0];
        assert_eq!(rec.mode, Mode::Edge(1));
        assert_eq!(rec.channels, (0..8).collect::<Vec<_>>());
        assert!(rec.reward.abs() < 1.0);
    }

    #[test]
    fn protocol_errors() {
        let mut env = Environment::new(small_cfg(2, 1, 1), EnvOptions::default(), 4).unwrap();
        assert!(matches!(env.step(&[Some(0)]), Err(SimError::Protocol(_))));
        assert!(matches!(env.step(&[Some(0), None]), Err(SimError::Protocol(_))));
        assert!(matches!(env.step(&[Some(0), Some(2)]), Err(SimError::Protocol(_))));
        let out = env.step(&[Some(0), Some(1)]).unwrap();
        assert!(out.done);
        assert_eq!(out.finished, vec![true, true]);
        assert!(out.next_states.iter().all(Option::is_none));
        assert!(matches!(env.step(&[Some(0), None]), Err(SimError::Protocol(_))));
    }

    #[test]
    fn admission_keeps_the_highest_priorities() {
        let mut cfg = small_cfg(4, 1, 3);
        cfg.network.subchannels = 2;
        let mut env = Environment::new(cfg, EnvOptions::default(), 8).unwrap();
        let prio: Vec<f64> = env.terminals().iter().map(|t| t.priorities.priority[t.head().unwrap()]).collect();
        let mut ranked: Vec<usize> = (0..4).collect();
        ranked.sort_by(|&a, &b| prio[b].total_cmp(&prio[a]).then(a.cmp(&b)));
        let out = env.step(&[Some(1); 4]).unwrap();
        let mut expected = ranked[..2].to_vec();
        expected.sort_unstable();
        assert_eq!(out.record.cells[0].members, expected);
        for rec in &out.record.tasks {
            let kept = expected.contains(&rec.terminal);
            assert_eq!(rec.admitted, kept);
            assert_eq!(rec.mode == Mode::Local, !kept);
            if !kept {
                assert_eq!(rec.reward, 0.0);
                assert_eq!(rec.action, 1);
            }
        }
    }

    #[test]
    fn reward_limit_is_the_largest_double_below_one() {
        const { assert!(REWARD_LIMIT < 1.0) };
        assert_eq!(REWARD_LIMIT.next_up(), 1.0);
        assert_eq!((-40.0f64).tanh().clamp(-REWARD_LIMIT, REWARD_LIMIT), -REWARD_LIMIT);
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        let s: Vec<u64> = (1..=5).map(|k| derive_seed(42, k)).collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(42, 1), derive_seed(42, 1));
    }
}
