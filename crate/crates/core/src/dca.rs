//! Per-cell subchannel allocation as a grouped knapsack, solved exactly by
//! dynamic programming over channel counts.
//!
//! Each offloading terminal is a group; its items are the channel counts
//! `z = 1..=K-N+1` with the estimated upload cost as value. Exactly one item is
//! taken per group and the chosen counts must use all `K` channels.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cost::tradeoff_cost;
use crate::error::{Result, SimError};
use crate::radio::{estimated_rate, RadioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GkpInstance {
    capacity: usize,
    /// `values[n][z - 1]` is the cost of giving group `n` exactly `z` channels.
    values: Vec<Vec<f64>>,
}

impl GkpInstance {
    pub fn new(capacity: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let groups = values.len();
        if groups == 0 || groups > capacity {
            return Err(SimError::Infeasible { groups, capacity });
        }
        let items = capacity - groups + 1;
        for row in &values {
            if row.len() != items {
                return Err(SimError::Shape { expected: items, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(SimError::Parameter("knapsack values must be finite".into()));
            }
        }
        Ok(Self { capacity, values })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn groups(&self) -> usize {
        self.values.len()
    }

    /// Largest channel count a single group may take.
    pub fn max_items(&self) -> usize {
        self.capacity - self.groups() + 1
    }

    pub fn value(&self, group: usize, z: usize) -> f64 {
        self.values[group][z - 1]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Channel counts per terminal and the minimized total value.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub counts: Vec<usize>,
    pub value: f64,
}

/// `dp[n][j]`: least cost of the first `n` groups using exactly `j` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub cells: Vec<Vec<f64>>,
}

impl DpTable {
    pub fn shape(&self) -> (usize, usize) {
        (self.cells.len(), self.cells.first().map_or(0, Vec::len))
    }
}

pub fn fill_table(inst: &GkpInstance) -> DpTable {
    let (groups, cap) = (inst.groups(), inst.capacity);
    let mut dp = vec![vec![f64::INFINITY; cap + 1]; groups + 1];
    dp[0][0] = 0.0;
    for n in 1..=groups {
        for j in (0..=cap).rev() {
            for z in 1..=inst.max_items() {
                if j >= z {
                    let cand = dp[n - 1][j - z] + inst.value(n - 1, z);
                    if cand < dp[n][j] {
                        dp[n][j] = cand;
                    }
                }
            }
        }
    }
    DpTable { cells: dp }
}

pub fn solve_gkp(inst: &GkpInstance) -> Result<AllocationPlan> {
    let table = fill_table(inst);
    let dp = &table.cells;
    let groups = inst.groups();
    let best = dp[groups][inst.capacity];
    if !best.is_finite() {
        return Err(SimError::Infeasible { groups, capacity: inst.capacity });
    }
    let mut counts = vec![0; groups];
    let mut j = inst.capacity;
    for n in (1..=groups).rev() {
        let z = (1..=inst.max_items())
            .rev()
            .find(|&z| j >= z && dp[n][j] == dp[n - 1][j - z] + inst.value(n - 1, z))
            .ok_or_else(|| SimError::Allocation("backtracking found no consistent item".into()))?;
        counts[n - 1] = z;
        j -= z;
    }
    Ok(AllocationPlan { counts, value: best })
}

/// Estimated upload cost of each terminal for every admissible channel count.
///
/// `v[n][z-1] = omega * d + (1 - omega) * p_n * d` with `d = b_n / r(z)`, where
/// `r(z)` is the interference-free rate over `z` channels at power `p_n / z`
/// and unit fading over the terminal's current distance to the server.
pub fn estimate_values(
    bits: &[f64],
    tx_power: &[f64],
    distances: &[f64],
    cfg: &RadioConfig,
    omega: f64,
) -> Result<GkpInstance> {
    let groups = bits.len();
    if tx_power.len() != groups || distances.len() != groups {
        return Err(SimError::Shape { expected: groups, got: tx_power.len().min(distances.len()) });
    }
    let cap = cfg.subchannels;
    if groups == 0 || groups > cap {
        return Err(SimError::Infeasible { groups, capacity: cap });
    }
    let values = (0..groups)
        .map(|n| {
            (1..=cap - groups + 1)
                .map(|z| {
                    let rate = estimated_rate(z as f64, tx_power[n], distances[n], cfg);
                    let d = bits[n] / rate;
                    tradeoff_cost(d, tx_power[n] * d, omega)
                })
                .collect()
        })
        .collect();
    GkpInstance::new(cap, values)
}

/// Binary channel-assignment matrix of one cell, one row per admitted terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    pub rows: Vec<Vec<bool>>,
}

impl AllocationMatrix {
    pub fn row_sums(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.iter().filter(|&&x| x).count()).collect()
    }

    /// Checks exclusivity, full use of all channels and one channel minimum
    /// per terminal.
    pub fn validate(&self, subchannels: usize) -> Result<()> {
        if self.rows.iter().any(|r| r.len() != subchannels) {
            return Err(SimError::Allocation("row width differs from subchannel count".into()));
        }
        for k in 0..subchannels {
            let users = self.rows.iter().filter(|r| r[k]).count();
            if users > 1 {
                return Err(SimError::Allocation(format!("subchannel {k} shared by {users} terminals")));
            }
            if users == 0 && !self.rows.is_empty() {
                return Err(SimError::Allocation(format!("subchannel {k} left unused")));
            }
        }
        if self.row_sums().contains(&0) {
            return Err(SimError::Allocation("offloading terminal without a subchannel".into()));
        }
        Ok(())
    }
}

/// Random channel identities for the given per-terminal counts.
pub fn materialize<R: Rng + ?Sized>(counts: &[usize], subchannels: usize, rng: &mut R) -> Result<AllocationMatrix> {
    let total: usize = counts.iter().sum();
    if total != subchannels {
        return Err(SimError::Allocation(format!("counts sum to {total}, expected {subchannels}")));
    }
    let mut perm: Vec<usize> = (0..subchannels).collect();
    perm.shuffle(rng);
    let mut rows = Vec::with_capacity(counts.len());
    let mut at = 0;
    for &z in counts {
        let mut row = vec![false; subchannels];
        for &k in &perm[at..at + z] {
            row[k] = true;
        }
        at += z;
        rows.push(row);
    }
    Ok(AllocationMatrix { rows })
}
