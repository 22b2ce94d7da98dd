//! Comparison policies and the randomized building blocks they rely on.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dag::AppDag;
use crate::dca::{materialize, AllocationMatrix};
use crate::env::{AllocationRule, EnvOptions, Environment, OrderingRule};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Learned offloading, priority-ordered queues, optimal channel split.
    Toica,
    /// The learned agent driven by random topological orders.
    ToicaRa,
    /// Nearest server with optimal channel split.
    OnDca,
    /// Greedy coordinate descent over servers with optimal channel split.
    SegDca,
    /// Learned offloading with random channel splits.
    DtoRandomAlloc,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Toica, PolicyKind::ToicaRa, PolicyKind::OnDca, PolicyKind::SegDca, PolicyKind::DtoRandomAlloc];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Toica => "toica",
            PolicyKind::ToicaRa => "toica-ra",
            PolicyKind::OnDca => "on-dca",
            PolicyKind::SegDca => "seg-dca",
            PolicyKind::DtoRandomAlloc => "dto-random",
        }
    }

    pub fn env_options(&self) -> EnvOptions {
        match self {
            PolicyKind::Toica | PolicyKind::OnDca | PolicyKind::SegDca => EnvOptions::default(),
            PolicyKind::ToicaRa => {
                EnvOptions { allocation: AllocationRule::Dca, ordering: OrderingRule::RandomTopological }
            }
            PolicyKind::DtoRandomAlloc => {
                EnvOptions { allocation: AllocationRule::Random, ordering: OrderingRule::Priority }
            }
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyKind::Toica | PolicyKind::ToicaRa | PolicyKind::DtoRandomAlloc)
    }

    /// Policy whose trained agent this policy runs with.
    pub fn training_policy(&self) -> Option<PolicyKind> {
        match self {
            PolicyKind::Toica | PolicyKind::ToicaRa => Some(PolicyKind::Toica),
            PolicyKind::DtoRandomAlloc => Some(PolicyKind::DtoRandomAlloc),
            PolicyKind::OnDca | PolicyKind::SegDca => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| SimError::Config(format!("unknown policy `{s}`")))
    }
}

/// Every pending terminal offloads to its nearest server, lowest index on ties.
pub fn on_policy(env: &Environment) -> Vec<Option<usize>> {
    env.terminals()
        .iter()
        .map(|t| {
            t.head()?;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (m, s) in env.servers().iter().enumerate() {
                let d = t.state.position.distance(&s.position);
                if d < best_d {
                    best = m;
                    best_d = d;
                }
            }
            Some(best + 1)
        })
        .collect()
}

/// Estimated total cost of a joint assignment of head tasks.
///
/// Each server splits its channels evenly (`max(1, K / N_m)` each) and runs
/// `N_m` tasks in parallel; rates ignore fading and interference.
pub fn estimated_total(env: &Environment, assign: &[Option<usize>]) -> Result<f64> {
    let m_servers = env.servers().len();
    let k = env.radio().subchannels;
    let mut occupancy = vec![0usize; m_servers];
    for a in assign.iter().flatten() {
        if *a > 0 {
            occupancy[a - 1] += 1;
        }
    }
    let mut total = 0.0;
    for (n, a) in assign.iter().enumerate() {
        match a {
            None => {}
            Some(0) => total += env.head_local_cost(n).ok_or_else(|| idle(n))?,
            Some(a) => {
                let occ = occupancy[a - 1];
                total += env.head_edge_estimate(n, a - 1, (k / occ).max(1), occ).ok_or_else(|| idle(n))??;
            }
        }
    }
    Ok(total)
}

fn idle(n: usize) -> SimError {
    SimError::Protocol(format!("terminal {n} has no pending task"))
}

/// Outcome of the greedy coordinate descent.
#[derive(Debug, Clone, PartialEq)]
pub struct SegOutcome {
    pub actions: Vec<Option<usize>>,
    /// Objective after the solo phase and after every pass.
    pub pass_costs: Vec<f64>,
    pub converged: bool,
}

/// Solo best responses, then round-robin best responses on `total` until a
/// pass changes nothing or `max_iters` passes have run.
///
/// `active[n]` marks the terminals that need an action; `actions` is the
/// action count. A terminal switches only on strict improvement.
pub fn seg_search<F>(active: &[bool], actions: usize, max_iters: usize, total: F) -> Result<SegOutcome>
where
    F: Fn(&[Option<usize>]) -> Result<f64>,
{
    let n_terms = active.len();
    let mut assign: Vec<Option<usize>> = vec![None; n_terms];
    for n in (0..n_terms).filter(|&n| active[n]) {
        let mut solo = vec![None; n_terms];
        let mut best = (f64::INFINITY, 0);
        for a in 0..actions {
            solo[n] = Some(a);
            let c = total(&solo)?;
            if c < best.0 {
                best = (c, a);
            }
        }
        assign[n] = Some(best.1);
    }
    let mut pass_costs = vec![total(&assign)?];
    let mut converged = !active.contains(&true);
    for _ in 0..max_iters {
        let mut changed = false;
        for n in (0..n_terms).filter(|&n| active[n]) {
            let current = assign[n];
            let mut best_cost = total(&assign)?;
            let mut best = current;
            for a in 0..actions {
                if Some(a) == current {
                    continue;
                }
                assign[n] = Some(a);
                let c = total(&assign)?;
                if c < best_cost {
                    best_cost = c;
                    best = Some(a);
                }
            }
            assign[n] = best;
            changed |= best != current;
        }
        pass_costs.push(total(&assign)?);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(SegOutcome { actions: assign, pass_costs, converged })
}

/// Single-edge greedy offloading on the environment's estimated costs.
pub fn seg_policy(env: &Environment, max_iters: usize) -> Result<SegOutcome> {
    let active: Vec<bool> = env.terminals().iter().map(|t| t.head().is_some()).collect();
    seg_search(&active, env.servers().len() + 1, max_iters, |assign| estimated_total(env, assign))
}

/// Uniformly random topological order: Kahn's algorithm drawing uniformly
/// from the ready set.
pub fn random_priority<R: Rng + ?Sized>(dag: &AppDag, rng: &mut R) -> Result<Vec<usize>> {
    let n = dag.len();
    let mut indegree: Vec<usize> = (0..n).map(|i| dag.pre(i).len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let v = ready.swap_remove(rng.random_range(0..ready.len()));
        order.push(v);
        for &s in dag.succ(v) {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(s);
            }
        }
    }
    if order.len() != n {
        return Err(SimError::Cyclic);
    }
    Ok(order)
}

/// Uniformly random composition of `total` into `parts` positive integers.
pub fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Result<Vec<usize>> {
    if parts == 0 || parts > total {
        return Err(SimError::Infeasible { groups: parts, capacity: total });
    }
    // choose parts-1 distinct cut points among the total-1 gaps
    let mut cuts = index::sample(rng, total - 1, parts - 1).into_vec();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c + 1 - prev);
        prev = c + 1;
    }
    out.push(total - prev);
    Ok(out)
}

/// Random channel split for `occupants` terminals, materialized like DCA.
pub fn random_allocation<R: Rng + ?Sized>(
    occupants: usize,
    subchannels: usize,
    rng: &mut R,
) -> Result<AllocationMatrix> {
    let counts = random_composition(subchannels, occupants, rng)?;
    materialize(&counts, subchannels, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!("ON_DCA".parse::<PolicyKind>().unwrap(), PolicyKind::OnDca);
        assert!("hrroga".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn on_policy_picks_nearest_server_and_never_local() {
        for seed in 0..20 {
            let env = Environment::new(SimConfig::default(), EnvOptions::default(), seed).unwrap();
            let acts = on_policy(&env);
            for (t, a) in env.terminals().iter().zip(&acts) {
                let a = a.unwrap();
                assert!(a >= 1);
                let d = t.state.position.distance(&env.servers()[a - 1].position);
                assert!(env.servers().iter().all(|s| t.state.position.distance(&s.position) >= d));
            }
        }
    }

    #[test]
    fn seg_zero_iterations_returns_solo_choices() {
        let costs = [[3.0, 1.0, 2.0], [1.0, 5.0, 5.0]];
        let out = seg_search(&[true, true], 3, 0, |a| {
            Ok(a.iter().enumerate().filter_map(|(n, x)| x.map(|x| costs[n][x])).sum())
        })
        .unwrap();
        assert_eq!(out.actions, vec![Some(1), Some(0)]);
        assert_eq!(out.pass_costs.len(), 1);
        assert!(!out.converged);
    }

    /// Two terminals, two servers: sharing a server triples each edge cost.
    fn crowding_table(a: &[Option<usize>]) -> Result<f64> {
        let local = [1.0, 1.0];
        let solo = [[0.0, 0.2, 0.3], [0.0, 0.25, 0.45]];
        let mut total = 0.0;
        for (n, x) in a.iter().enumerate() {
            let Some(x) = *x else { continue };
            if x == 0 {
                total += local[n];
            } else {
                let shared = a.iter().filter(|y| **y == Some(x)).count();
                total += solo[n][x] * if shared > 1 { 3.0 } else { 1.0 };
            }
        }
        Ok(total)
    }

    #[test]
    fn seg_splits_when_colocation_hurts() {
        let out = seg_search(&[true, true], 3, 10, crowding_table).unwrap();
        // brute force over the joint assignments
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..3 {
            for b in 0..3 {
                let c = crowding_table(&[Some(a), Some(b)]).unwrap();
                if c < best.0 {
                    best = (c, vec![Some(a), Some(b)]);
                }
            }
        }
        assert_eq!(out.actions, best.1);
        assert_ne!(out.actions[0], out.actions[1]);
        assert!(out.converged);
        assert!(out.pass_costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn seg_single_terminal_is_its_solo_optimum() {
        let mut cfg = SimConfig::default();
        cfg.network.terminals = 1;
        for seed in 0..10 {
            let env = Environment::new(cfg.clone(), EnvOptions::default(), seed).unwrap();
            let out = seg_policy(&env, 10).unwrap();
            assert!(out.converged);
            assert_eq!(out.pass_costs.len(), 2);
            let chosen = estimated_total(&env, &out.actions).unwrap();
            for a in 0..4 {
                assert!(chosen <= estimated_total(&env, &[Some(a)]).unwrap());
            }
        }
    }

    #[test]
    fn seg_never_increases_estimated_cost() {
        for seed in 0..30 {
            let env = Environment::new(SimConfig::default(), EnvOptions::default(), seed).unwrap();
            let out = seg_policy(&env, 10).unwrap();
            assert!(out.pass_costs.windows(2).all(|w| w[1] <= w[0]), "{:?}", out.pass_costs);
            assert!(out.actions.iter().all(|a| a.unwrap() <= 3));
        }
    }

    #[test]
    fn random_priority_respects_dependencies() {
        let fixture = include_str!("../fixtures/health_monitoring.toml");
        let dag = AppDag::from_fixture_str(0, fixture).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            assert!(dag.is_topological(&random_priority(&dag, &mut rng).unwrap()));
        }
        let chain = AppDag::new(0, dag.tasks()[..4].to_vec(), vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(random_priority(&chain, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        let a = random_priority(&dag, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_priority(&dag, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert_eq!(random_composition(8, 8, &mut rng).unwrap(), vec![1; 8]);
        assert_eq!(random_composition(8, 1, &mut rng).unwrap(), vec![8]);
        assert!(random_composition(3, 4, &mut rng).is_err());
        assert!(random_composition(3, 0, &mut rng).is_err());
        for _ in 0..10_000 {
            let parts = rng.random_range(1..=8);
            let c = random_composition(8, parts, &mut rng).unwrap();
            assert_eq!(c.len(), parts);
            assert_eq!(c.iter().sum::<usize>(), 8);
            assert!(c.iter().all(|&z| z >= 1));
        }
        let m = random_allocation(3, 8, &mut rng).unwrap();
        m.validate(8).unwrap();
    }

    #[test]
    fn compositions_are_uniform() {
        // 3 into 2 parts: (1,2) and (2,1) equally likely
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 20_000;
        let ones = (0..n).filter(|_| random_composition(3, 2, &mut rng).unwrap()[0] == 1).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones as f64 - n as f64 / 2.0).abs() < 4.0 * sigma);
    }
}
