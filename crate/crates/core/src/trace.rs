//! Episode traces, their CSV export and the constraint audit.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cost::Mode;
use crate::dag::AppDag;
use crate::dca::AllocationMatrix;
use crate::error::{Result, SimError};

/// Realized outcome of one terminal's task in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub terminal: usize,
    pub task: usize,
    /// Action requested by the policy.
    pub action: usize,
    /// Where the task actually ran (differs from the action when admission
    /// sent it back to the terminal).
    pub mode: Mode,
    pub admitted: bool,
    /// Subchannel indices held in the serving cell.
    pub channels: Vec<usize>,
    pub d_tr: f64,
    pub d_co: f64,
    pub delay: f64,
    pub energy: f64,
    pub cost: f64,
    /// Cost the same task would have had on the terminal.
    pub local_cost: f64,
    pub reward: f64,
    pub priority: f64,
    /// Latest predecessor finish time.
    pub ready_time: f64,
    /// `ready_time + delay`.
    pub finish_time: f64,
}

/// Channel allocation of one cell in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub server: usize,
    /// Terminals in row order of `allocation`.
    pub members: Vec<usize>,
    pub allocation: AllocationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub start: f64,
    /// Longest realized processing time in the slot.
    pub duration: f64,
    pub tasks: Vec<TaskRecord>,
    pub cells: Vec<CellRecord>,
}

impl SlotRecord {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn reward_sum(&self) -> f64 {
        self.tasks.iter().map(|t| t.reward).sum()
    }

    pub fn energy_sum(&self) -> f64 {
        self.tasks.iter().map(|t| t.energy).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub seed: u64,
    pub omega: f64,
    pub subchannels: usize,
    pub servers: usize,
    pub dags: Vec<AppDag>,
    pub slots: Vec<SlotRecord>,
}

/// Episode aggregates over all realized tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub cumulative_reward: f64,
    pub mean_cost: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    /// `omega * sum of slot durations + (1 - omega) * total energy`.
    pub objective: f64,
    pub tasks: usize,
    pub slots: usize,
    pub offload_share: f64,
}

impl EpisodeTrace {
    pub fn tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.slots.iter().flat_map(|s| s.tasks.iter())
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.slots.iter().map(SlotRecord::reward_sum).sum()
    }

    /// Delay of each terminal's application: the latest exit-task finish.
    pub fn app_delays(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.dags.len()];
        for t in self.tasks() {
            if self.dags[t.terminal].is_exit(t.task) {
                out[t.terminal] = out[t.terminal].max(t.finish_time);
            }
        }
        out
    }

    pub fn summary(&self) -> Result<EpisodeSummary> {
        let n = self.tasks().count();
        if n == 0 {
            return Err(SimError::Trace("episode has no realized task".into()));
        }
        let nf = n as f64;
        let total_energy: f64 = self.tasks().map(|t| t.energy).sum();
        let total_time: f64 = self.slots.iter().map(|s| s.duration).sum();
        Ok(EpisodeSummary {
            cumulative_reward: self.cumulative_reward(),
            mean_cost: self.tasks().map(|t| t.cost).sum::<f64>() / nf,
            mean_delay: self.tasks().map(|t| t.delay).sum::<f64>() / nf,
            mean_energy: total_energy / nf,
            objective: self.omega * total_time + (1.0 - self.omega) * total_energy,
            tasks: n,
            slots: self.slots.len(),
            offload_share: self.tasks().filter(|t| t.mode != Mode::Local).count() as f64 / nf,
        })
    }
}

/// Constraint families checked by [`audit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// Each task runs exactly once, in at most one place.
    SingleMode,
    /// No subchannel serves two terminals of the same cell.
    Exclusive,
    /// Every subchannel of an active cell is used.
    FullUse,
    /// Every offloading terminal holds at least one subchannel.
    MinOneChannel,
    /// No task starts before all its predecessors finished.
    Dependency,
    /// Rewards lie in (-1, 1) and are zero for local execution.
    RewardBounds,
    /// Slot durations, slot chaining and the per-task bookkeeping agree.
    Timing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    pub slot: usize,
    pub detail: String,
}

const TOL: f64 = 1e-9;

/// Every constraint violation found in `trace`.
pub fn audit(trace: &EpisodeTrace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |constraint, slot, detail: String| out.push(Violation { constraint, slot, detail });

    // (terminal, task) -> slot index
    let mut placed: HashMap<(usize, usize), (usize, &TaskRecord)> = HashMap::new();
    let mut clock = 0.0;
    for (si, slot) in trace.slots.iter().enumerate() {
        if (slot.start - clock).abs() > TOL * clock.max(1.0) {
            push(Constraint::Timing, si, format!("slot starts at {} but previous slot ended at {clock}", slot.start));
        }
        let longest = slot.tasks.iter().map(|t| t.delay).fold(0.0, f64::max);
        if (slot.duration - longest).abs() > TOL * longest.max(1.0) {
            push(Constraint::Timing, si, format!("duration {} differs from longest delay {longest}", slot.duration));
        }
        clock = slot.end();

        let mut seen_terminals = Vec::new();
        for t in &slot.tasks {
            if seen_terminals.contains(&t.terminal) {
                push(Constraint::SingleMode, si, format!("terminal {} runs two tasks", t.terminal));
            }
            seen_terminals.push(t.terminal);
            if t.terminal >= trace.dags.len() || t.task >= trace.dags[t.terminal].len() {
                push(Constraint::SingleMode, si, format!("unknown task {}/{}", t.terminal, t.task));
                continue;
            }
            if let Mode::Edge(m) = t.mode {
                if m >= trace.servers {
                    push(Constraint::SingleMode, si, format!("server {m} does not exist"));
                }
            }
            if placed.insert((t.terminal, t.task), (si, t)).is_some() {
                push(Constraint::SingleMode, si, format!("task {}/{} executed twice", t.terminal, t.task));
            }
            if !(t.reward.is_finite() && t.reward.abs() < 1.0) {
                push(Constraint::RewardBounds, si, format!("reward {} out of range", t.reward));
            }
            if t.mode == Mode::Local && t.reward != 0.0 {
                push(Constraint::RewardBounds, si, format!("local task rewarded {}", t.reward));
            }
            if t.mode == Mode::Local && !t.channels.is_empty() {
                push(Constraint::MinOneChannel, si, format!("local task of terminal {} holds channels", t.terminal));
            }
            if t.mode != Mode::Local && t.channels.is_empty() {
                push(Constraint::MinOneChannel, si, format!("terminal {} offloads without a channel", t.terminal));
            }
            if (t.finish_time - (t.ready_time + t.delay)).abs() > TOL * t.finish_time.max(1.0) {
                push(Constraint::Timing, si, format!("finish time of {}/{} inconsistent", t.terminal, t.task));
            }
        }

        for cell in &slot.cells {
            let rows = cell.allocation.rows.len();
            if rows != cell.members.len() {
                push(
                    Constraint::Exclusive,
                    si,
                    format!("cell {} lists {} members for {rows} rows", cell.server, cell.members.len()),
                );
                continue;
            }
            for k in 0..trace.subchannels {
                let users = cell.allocation.rows.iter().filter(|r| r.get(k).copied().unwrap_or(false)).count();
                if users > 1 {
                    push(Constraint::Exclusive, si, format!("cell {} channel {k} has {users} users", cell.server));
                }
                if users == 0 && rows > 0 {
                    push(Constraint::FullUse, si, format!("cell {} leaves channel {k} idle", cell.server));
                }
            }
            for (row, &member) in cell.allocation.rows.iter().zip(&cell.members) {
                let held: Vec<usize> = row.iter().enumerate().filter(|(_, &x)| x).map(|(k, _)| k).collect();
                if held.is_empty() {
                    push(
                        Constraint::MinOneChannel,
                        si,
                        format!("terminal {member} admitted to cell {} without channel", cell.server),
                    );
                }
                match slot.tasks.iter().find(|t| t.terminal == member) {
                    Some(t) if t.mode == Mode::Edge(cell.server) && t.channels == held => {}
                    _ => push(
                        Constraint::Exclusive,
                        si,
                        format!("allocation of terminal {member} disagrees with its task record"),
                    ),
                }
            }
        }
        for t in &slot.tasks {
            if let Mode::Edge(m) = t.mode {
                let listed = slot.cells.iter().any(|c| c.server == m && c.members.contains(&t.terminal));
                if !listed {
                    push(
                        Constraint::Exclusive,
                        si,
                        format!("terminal {} offloads to {m} outside any allocation", t.terminal),
                    );
                }
            }
        }
    }

    for (n, dag) in trace.dags.iter().enumerate() {
        for i in 0..dag.len() {
            let Some(&(slot_i, rec_i)) = placed.get(&(n, i)) else {
                push(Constraint::SingleMode, usize::MAX, format!("task {n}/{i} never executed"));
                continue;
            };
            for &p in dag.pre(i) {
                let Some(&(slot_p, rec_p)) = placed.get(&(n, p)) else {
                    continue;
                };
                let ordered = slot_p < slot_i
                    && trace.slots[slot_p].end() <= trace.slots[slot_i].start + TOL
                    && rec_i.ready_time + TOL >= rec_p.finish_time;
                if !ordered {
                    push(
                        Constraint::Dependency,
                        slot_i,
                        format!("task {n}/{i} starts before predecessor {p} finished"),
                    );
                }
            }
        }
    }
    out
}

/// Fails on the first violation found.
pub fn validate(trace: &EpisodeTrace) -> Result<()> {
    match audit(trace).into_iter().next() {
        None => Ok(()),
        Some(v) => Err(SimError::Trace(format!("{:?} violated in slot {}: {}", v.constraint, v.slot, v.detail))),
    }
}

/// One row of the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub slot: usize,
    pub terminal: usize,
    pub task: usize,
    pub action: usize,
    pub channels_assigned: usize,
    pub d_tr: f64,
    pub d_co: f64,
    pub d_total: f64,
    pub energy: f64,
    pub reward: f64,
    pub cost: f64,
    #[serde(rename = "D_t")]
    pub d_t: f64,
}

pub fn trace_rows(trace: &EpisodeTrace) -> Vec<TraceRow> {
    trace
        .slots
        .iter()
        .flat_map(|s| {
            s.tasks.iter().map(move |t| TraceRow {
                episode: trace.episode,
                slot: s.slot,
                terminal: t.terminal,
                task: t.task,
                action: t.mode.action(),
                channels_assigned: t.channels.len(),
                d_tr: t.d_tr,
                d_co: t.d_co,
                d_total: t.delay,
                energy: t.energy,
                reward: t.reward,
                cost: t.cost,
                d_t: s.duration,
            })
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(traces: &[EpisodeTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for tr in traces {
        for row in trace_rows(tr) {
            w.serialize(row).map_err(|e| SimError::Report(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .map_err(|e| SimError::Report(e.to_string()))
}
