//! Cost-based task priorities that flatten a DAG into an execution queue.

use crate::cost::{edge_compute_time, edge_energy, local_delay, local_energy, tradeoff_cost};
use crate::dag::{AppDag, TaskSpec};
use crate::error::{Result, SimError};
use crate::radio::{comm_time, estimated_rate, RadioConfig, ServerState, TerminalState};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityTable {
    /// Summed estimated cost over all processing modes, per task.
    pub avg_cost: Vec<f64>,
    pub priority: Vec<f64>,
    /// Task indices by descending priority, ties by ascending index.
    pub order: Vec<usize>,
}

/// Estimated cost of `task` summed over local execution and every server.
///
/// Edge terms assume the terminal alone on one subchannel with unit fading, no
/// co-channel interference and a single VM on the server.
pub fn estimate_task_cost(
    task: &TaskSpec,
    terminal: &TerminalState,
    servers: &[ServerState],
    radio: &RadioConfig,
    omega: f64,
) -> Result<f64> {
    let local = tradeoff_cost(
        local_delay(task.cycles, terminal.cpu_freq),
        local_energy(task.cycles, terminal.cpu_freq, terminal.kappa),
        omega,
    );
    servers.iter().try_fold(local, |acc, s| {
        let rate = estimated_rate(1.0, terminal.tx_power, terminal.position.distance(&s.position), radio);
        let d_tr = comm_time(task.bits, rate)?;
        let d_co = edge_compute_time(task.cycles, s.cpu_freq, 1, s.degradation)?;
        let e = edge_energy(terminal.tx_power, d_tr, terminal.static_power, d_co);
        Ok(acc + tradeoff_cost(d_tr + d_co, e, omega))
    })
}

pub fn compute_priorities(dag: &AppDag, est_costs: &[f64]) -> Result<PriorityTable> {
    if est_costs.len() != dag.len() {
        return Err(SimError::Shape { expected: dag.len(), got: est_costs.len() });
    }
    if let Some(bad) = est_costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(SimError::Parameter(format!("estimated task cost must be positive, got {bad}")));
    }
    let topo = dag.topological_order()?;
    let mut priority = vec![0.0; dag.len()];
    for &i in topo.iter().rev() {
        let best_succ =
            dag.succ(i).iter().map(|&s| priority[s]).fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
        priority[i] = match best_succ {
            None => est_costs[i],
            Some(p) => p + est_costs[i],
        };
    }
    let mut order: Vec<usize> = (0..dag.len()).collect();
    order.sort_by(|&a, &b| priority[b].total_cmp(&priority[a]).then(a.cmp(&b)));
    Ok(PriorityTable { avg_cost: est_costs.to_vec(), priority, order })
}
