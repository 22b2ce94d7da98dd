//! Delay, energy and weighted cost of local and edge execution.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Where a task runs: on the terminal or on edge server `m` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Local,
    Edge(usize),
}

impl Mode {
    /// Action index: 0 is local, `m + 1` is server `m`.
    pub fn from_action(a: usize) -> Self {
        match a {
            0 => Mode::Local,
            m => Mode::Edge(m - 1),
        }
    }

    pub fn action(&self) -> usize {
        match *self {
            Mode::Local => 0,
            Mode::Edge(m) => m + 1,
        }
    }

    pub fn server(&self) -> Option<usize> {
        match *self {
            Mode::Local => None,
            Mode::Edge(m) => Some(m),
        }
    }
}

pub fn local_delay(cycles: f64, cpu_freq: f64) -> f64 {
    cycles / cpu_freq
}

pub fn local_energy(cycles: f64, cpu_freq: f64, kappa: f64) -> f64 {
    kappa * cycles * cpu_freq * cpu_freq
}

/// Compute time on a server hosting `occupancy` concurrent VMs, each extra VM
/// slowing I/O by a factor `1 + degradation`.
pub fn edge_compute_time(cycles: f64, server_freq: f64, occupancy: usize, degradation: f64) -> Result<f64> {
    if occupancy == 0 {
        return Err(SimError::ZeroOccupancy);
    }
    Ok(cycles / server_freq * (1.0 + degradation).powi(occupancy as i32 - 1))
}

pub fn edge_total(d_tr: f64, d_co: f64) -> f64 {
    d_tr + d_co
}

pub fn edge_energy(tx_power: f64, d_tr: f64, static_power: f64, d_co: f64) -> f64 {
    tx_power * d_tr + static_power * d_co
}

pub fn tradeoff_cost(delay: f64, energy: f64, omega: f64) -> f64 {
    omega * delay + (1.0 - omega) * energy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCost {
    pub delay: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub server: usize,
    pub d_tr: f64,
    pub d_co: f64,
    pub delay: f64,
    pub energy: f64,
}

/// Realized delay/energy of one task in exactly one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostBreakdown {
    Local { cost: LocalCost, omega: f64, total: f64 },
    Edge { cost: EdgeCost, omega: f64, total: f64 },
}

impl CostBreakdown {
    pub fn local(cycles: f64, cpu_freq: f64, kappa: f64, omega: f64) -> Self {
        let cost = LocalCost { delay: local_delay(cycles, cpu_freq), energy: local_energy(cycles, cpu_freq, kappa) };
        let total = tradeoff_cost(cost.delay, cost.energy, omega);
        CostBreakdown::Local { cost, omega, total }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn edge(
        server: usize,
        d_tr: f64,
        cycles: f64,
        server_freq: f64,
        occupancy: usize,
        degradation: f64,
        tx_power: f64,
        static_power: f64,
        omega: f64,
    ) -> Result<Self> {
        let d_co = edge_compute_time(cycles, server_freq, occupancy, degradation)?;
        let cost = EdgeCost {
            server,
            d_tr,
            d_co,
            delay: edge_total(d_tr, d_co),
            energy: edge_energy(tx_power, d_tr, static_power, d_co),
        };
        let total = tradeoff_cost(cost.delay, cost.energy, omega);
        Ok(CostBreakdown::Edge { cost, omega, total })
    }

    pub fn mode(&self) -> Mode {
        match self {
            CostBreakdown::Local { .. } => Mode::Local,
            CostBreakdown::Edge { cost, .. } => Mode::Edge(cost.server),
        }
    }

    pub fn delay(&self) -> f64 {
        match self {
            CostBreakdown::Local { cost, .. } => cost.delay,
            CostBreakdown::Edge { cost, .. } => cost.delay,
        }
    }

    pub fn energy(&self) -> f64 {
        match self {
            CostBreakdown::Local { cost, .. } => cost.energy,
            CostBreakdown::Edge { cost, .. } => cost.energy,
        }
    }

    pub fn total(&self) -> f64 {
        match *self {
            CostBreakdown::Local { total, .. } | CostBreakdown::Edge { total, .. } => total,
        }
    }

    pub fn omega(&self) -> f64 {
        match *self {
            CostBreakdown::Local { omega, .. } | CostBreakdown::Edge { omega, .. } => omega,
        }
    }

    pub fn d_tr(&self) -> f64 {
        match self {
            CostBreakdown::Local { .. } => 0.0,
            CostBreakdown::Edge { cost, .. } => cost.d_tr,
        }
    }

    pub fn d_co(&self) -> f64 {
        match self {
            CostBreakdown::Local { cost, .. } => cost.delay,
            CostBreakdown::Edge { cost, .. } => cost.d_co,
        }
    }
}

/// Aggregates of an episode: slot-duration objective and per-task means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// Sum over slots of the slot duration (max processing time in the slot).
    pub total_slot_time: f64,
    pub total_energy: f64,
    /// `omega * total_slot_time + (1 - omega) * total_energy`.
    pub objective: f64,
    pub mean_task_cost: f64,
    pub mean_delay: f64,
    pub mean_energy: f64,
    pub tasks: usize,
}

/// Slot duration: the longest realized processing time among active terminals.
pub fn slot_duration(costs: &[CostBreakdown]) -> f64 {
    costs.iter().map(CostBreakdown::delay).fold(0.0, f64::max)
}

/// Objective terms over the per-slot realized task costs of one episode.
pub fn objective_terms(slots: &[Vec<CostBreakdown>], omega: f64) -> Result<ObjectiveTerms> {
    let tasks: usize = slots.iter().map(Vec::len).sum();
    if tasks == 0 {
        return Err(SimError::Trace("no realized tasks in episode".into()));
    }
    let total_slot_time: f64 = slots.iter().map(|s| slot_duration(s)).sum();
    let all = || slots.iter().flatten();
    let total_energy: f64 = all().map(CostBreakdown::energy).sum();
    let n = tasks as f64;
    Ok(ObjectiveTerms {
        total_slot_time,
        total_energy,
        objective: tradeoff_cost(total_slot_time, total_energy, omega),
        mean_task_cost: all().map(CostBreakdown::total).sum::<f64>() / n,
        mean_delay: all().map(CostBreakdown::delay).sum::<f64>() / n,
        mean_energy: total_energy / n,
        tasks,
    })
}
