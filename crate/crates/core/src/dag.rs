//! Application task graphs: structure, timing semantics and a seeded generator.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Bits in one kilobyte (decimal).
pub const BITS_PER_KB: f64 = 8_000.0;

/// One computational task: input data volume and required CPU cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub bits: f64,
    pub cycles: f64,
}

impl TaskSpec {
    pub fn new(bits: f64, cycles: f64) -> Result<Self> {
        if !(bits > 0.0 && cycles > 0.0) {
            return Err(SimError::Parameter(format!("task needs positive bits and cycles, got ({bits}, {cycles})")));
        }
        Ok(Self { bits, cycles })
    }
}

/// A directed acyclic task graph for one terminal's application.
///
/// Construction validates the edge list, so every `AppDag` in circulation is
/// acyclic and has consistent predecessor/successor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AppDag {
    terminal: usize,
    tasks: Vec<TaskSpec>,
    edges: Vec<(usize, usize)>,
    pre: Vec<Vec<usize>>,
    succ: Vec<Vec<usize>>,
}

impl AppDag {
    pub fn new(terminal: usize, tasks: Vec<TaskSpec>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = tasks.len();
        if n == 0 {
            return Err(SimError::Parameter("application needs at least one task".into()));
        }
        let mut unique = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(SimError::Parameter(format!("edge ({u}, {v}) out of range for {n} tasks")));
            }
            if u == v {
                return Err(SimError::Cyclic);
            }
            unique.insert((u, v));
        }
        let edges: Vec<_> = unique.into_iter().collect();
        let mut pre = vec![Vec::new(); n];
        let mut succ = vec![Vec::new(); n];
        for &(u, v) in &edges {
            succ[u].push(v);
            pre[v].push(u);
        }
        let dag = Self { terminal, tasks, edges, pre, succ };
        dag.topological_order()?;
        Ok(dag)
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> &TaskSpec {
        &self.tasks[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn pre(&self, i: usize) -> &[usize] {
        &self.pre[i]
    }

    pub fn succ(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    pub fn is_entry(&self, i: usize) -> bool {
        self.pre[i].is_empty()
    }

    pub fn is_exit(&self, i: usize) -> bool {
        self.succ[i].is_empty()
    }

    pub fn entry_tasks(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_entry(i)).collect()
    }

    pub fn exit_tasks(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_exit(i)).collect()
    }

    /// Kahn's algorithm, always releasing the lowest ready index first.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.pre.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for &v in &self.succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    ready.insert(v);
                }
            }
        }
        if order.len() != n {
            return Err(SimError::Cyclic);
        }
        Ok(order)
    }

    /// True when `order` is a permutation of the tasks in which every edge
    /// points forward.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        if order.len() != self.len() {
            return false;
        }
        let mut pos = vec![usize::MAX; self.len()];
        for (k, &i) in order.iter().enumerate() {
            if i >= self.len() || pos[i] != usize::MAX {
                return false;
            }
            pos[i] = k;
        }
        self.edges.iter().all(|&(u, v)| pos[u] < pos[v])
    }

    pub fn from_fixture_str(terminal: usize, text: &str) -> Result<Self> {
        let fx: DagFixture = toml::from_str(text).map_err(|e| SimError::Parameter(format!("bad DAG fixture: {e}")))?;
        if fx.tasks.len() != fx.n_tasks {
            return Err(SimError::Parameter(format!(
                "fixture declares {} tasks but lists {}",
                fx.n_tasks,
                fx.tasks.len()
            )));
        }
        let tasks = fx.tasks.iter().map(|t| TaskSpec::new(t.bits, t.cycles)).collect::<Result<Vec<_>>>()?;
        let edges = fx.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(terminal, tasks, edges)
    }

    pub fn to_fixture_string(&self) -> String {
        let fx = DagFixture {
            n_tasks: self.len(),
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            tasks: self.tasks.clone(),
        };
        toml::to_string(&fx).expect("fixture serialization is infallible")
    }
}

#[derive(Serialize, Deserialize)]
struct DagFixture {
    n_tasks: usize,
    edges: Vec<[usize; 2]>,
    tasks: Vec<TaskSpec>,
}

/// Ready time of `task`: the latest finish time among its predecessors, zero
/// for entry tasks.
pub fn ready_time(dag: &AppDag, finish: &[Option<f64>], task: usize) -> Result<f64> {
    dag.pre(task).iter().try_fold(0.0_f64, |acc, &p| match finish[p] {
        Some(ft) => Ok(acc.max(ft)),
        None => Err(SimError::DependencyOrder { task, pred: p }),
    })
}

/// Completion delay of the application: the latest exit-task finish time.
pub fn app_delay(dag: &AppDag, finish: &[Option<f64>]) -> Result<f64> {
    dag.exit_tasks().into_iter().try_fold(0.0_f64, |acc, ex| match finish[ex] {
        Some(ft) => Ok(acc.max(ft)),
        None => Err(SimError::IncompleteApplication(ex)),
    })
}

/// Layered random DAG generator.
///
/// Tasks are spread over `layers` layers (each non-empty); every task links to
/// at least one task of the next layer and receives at least one link from the
/// previous one, then extra adjacent-layer edges appear with `edge_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DagGenerator {
    pub n_tasks: usize,
    pub layers: usize,
    pub edge_prob: f64,
    /// Input data volume range, kilobytes.
    pub kb_min: f64,
    pub kb_max: f64,
    /// Computation range, megacycles.
    pub mcycles_min: f64,
    pub mcycles_max: f64,
}

impl Default for DagGenerator {
    fn default() -> Self {
        Self {
            n_tasks: 15,
            layers: 5,
            edge_prob: 0.3,
            kb_min: 150.0,
            kb_max: 400.0,
            mcycles_min: 30.0,
            mcycles_max: 80.0,
        }
    }
}

impl DagGenerator {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(SimError::Parameter("n_tasks must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(SimError::Parameter(format!("edge_prob {} outside [0, 1]", self.edge_prob)));
        }
        if !(self.kb_min > 0.0 && self.kb_min <= self.kb_max) {
            return Err(SimError::Parameter("data volume range must be positive and ordered".into()));
        }
        if !(self.mcycles_min > 0.0 && self.mcycles_min <= self.mcycles_max) {
            return Err(SimError::Parameter("cycle range must be positive and ordered".into()));
        }
        Ok(())
    }

    pub fn bits_range(&self) -> RangeInclusive<f64> {
        self.kb_min * BITS_PER_KB..=self.kb_max * BITS_PER_KB
    }

    pub fn cycles_range(&self) -> RangeInclusive<f64> {
        self.mcycles_min * 1e6..=self.mcycles_max * 1e6
    }

    pub fn generate<R: Rng + ?Sized>(&self, terminal: usize, rng: &mut R) -> Result<AppDag> {
        self.validate()?;
        let n = self.n_tasks;
        let layer_count = self.layers.clamp(1, n);

        let mut sizes = vec![1usize; layer_count];
        for _ in layer_count..n {
            sizes[rng.random_range(0..layer_count)] += 1;
        }
        let mut layers = Vec::with_capacity(layer_count);
        let mut next = 0;
        for &s in &sizes {
            layers.push((next..next + s).collect::<Vec<_>>());
            next += s;
        }

        let mut edges = BTreeSet::new();
        for w in layers.windows(2) {
            let (cur, nxt) = (&w[0], &w[1]);
            for &u in cur {
                edges.insert((u, *nxt.choose(rng).expect("layers are non-empty")));
            }
            for &v in nxt {
                if !cur.iter().any(|&u| edges.contains(&(u, v))) {
                    edges.insert((*cur.choose(rng).expect("layers are non-empty"), v));
                }
            }
            for &u in cur {
                for &v in nxt {
                    if rng.random_bool(self.edge_prob) {
                        edges.insert((u, v));
                    }
                }
            }
        }

        let (bits, cycles) = (self.bits_range(), self.cycles_range());
        let tasks = (0..n)
            .map(|_| TaskSpec { bits: rng.random_range(bits.clone()), cycles: rng.random_range(cycles.clone()) })
            .collect();
        AppDag::new(terminal, tasks, edges.into_iter().collect())
    }
}

/// Seeded convenience wrapper using the default data and cycle ranges.
pub fn generate_random_dag(n_tasks: usize, layer_count: usize, edge_prob: f64, seed: u64) -> Result<AppDag> {
    let gen = DagGenerator { n_tasks, layers: layer_count, edge_prob, ..DagGenerator::default() };
    gen.generate(0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> AppDag {
        let tasks = vec![TaskSpec::new(1.0, 1.0).unwrap(); n];
        AppDag::new(0, tasks, (1..n).map(|i| (i - 1, i)).collect()).unwrap()
    }

    #[test]
    fn single_task_is_entry_and_exit() {
        for layers in [0, 1, 3, 10] {
            let d = generate_random_dag(1, layers, 0.5, 3).unwrap();
            assert_eq!(d.len(), 1);
            assert!(d.is_entry(0) && d.is_exit(0));
            assert!(d.edges().is_empty());
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_random_dag(15, 5, 0.3, 7).unwrap();
        let b = generate_random_dag(15, 5, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_random_dag(15, 5, 0.3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generator_structure() {
        for seed in 0..200 {
            let d = generate_random_dag(15, 5, 0.3, seed).unwrap();
            // layered construction: only the first layer lacks predecessors,
            // only the last layer lacks successors
            let entries = d.entry_tasks();
            let exits = d.exit_tasks();
            assert!(!entries.is_empty() && !exits.is_empty());
            assert!(entries.iter().all(|e| !exits.contains(e)));
            assert_eq!(d.len(), 15);
            for t in d.tasks() {
                assert!((1.2e6..=3.2e6).contains(&t.bits));
                assert!((3e7..=8e7).contains(&t.cycles));
            }
            for i in 0..d.len() {
                for &s in d.succ(i) {
                    assert!(d.pre(s).contains(&i));
                }
            }
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(generate_random_dag(0, 3, 0.3, 1).is_err());
        assert!(generate_random_dag(5, 3, 1.5, 1).is_err());
        assert!(generate_random_dag(5, 3, -0.1, 1).is_err());
    }

    #[test]
    fn cycles_rejected() {
        let t = vec![TaskSpec::new(1.0, 1.0).unwrap(); 3];
        assert!(matches!(AppDag::new(0, t.clone(), vec![(0, 1), (1, 2), (2, 0)]), Err(SimError::Cyclic)));
        assert!(matches!(AppDag::new(0, t, vec![(1, 1)]), Err(SimError::Cyclic)));
    }

    #[test]
    fn ready_time_cases() {
        let t = vec![TaskSpec::new(1.0, 1.0).unwrap(); 4];
        let d = AppDag::new(0, t, vec![(0, 2), (1, 2), (0, 3)]).unwrap();
        let finish = vec![Some(2.0), Some(3.5), None, None];
        assert_eq!(ready_time(&d, &finish, 0).unwrap(), 0.0);
        assert_eq!(ready_time(&d, &finish, 2).unwrap(), 3.5);
        let finish = vec![Some(1.25), None, None, None];
        assert_eq!(ready_time(&d, &finish, 3).unwrap(), 1.25);
        assert!(matches!(ready_time(&d, &finish, 2), Err(SimError::DependencyOrder { task: 2, pred: 1 })));
    }

    #[test]
    fn app_delay_cases() {
        let single = chain(2);
        assert_eq!(app_delay(&single, &[Some(1.0), Some(4.2)]).unwrap(), 4.2);
        let t = vec![TaskSpec::new(1.0, 1.0).unwrap(); 4];
        let fan = AppDag::new(0, t, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(app_delay(&fan, &[Some(0.5), Some(3.0), Some(5.0), Some(4.0)]).unwrap(), 5.0);
        assert_eq!(app_delay(&fan, &[Some(0.0); 4]).unwrap(), 0.0);
        assert!(matches!(
            app_delay(&fan, &[Some(0.5), Some(3.0), None, Some(4.0)]),
            Err(SimError::IncompleteApplication(2))
        ));
    }

    #[test]
    fn health_monitoring_fixture() {
        let text = include_str!("../fixtures/health_monitoring.toml");
        let d = AppDag::from_fixture_str(0, text).unwrap();
        // tasks are 0-based in the file: v1 is index 0
        assert_eq!(d.pre(2), &[0, 1]);
        assert_eq!(d.succ(2), &[4, 5]);
        let back = AppDag::from_fixture_str(0, &d.to_fixture_string()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn fixture_count_mismatch() {
        let text = "n_tasks = 2\nedges = []\n[[tasks]]\nbits = 1.0\ncycles = 1.0\n";
        assert!(AppDag::from_fixture_str(0, text).is_err());
    }

    #[test]
    fn topological_check() {
        let d = chain(3);
        assert!(d.is_topological(&[0, 1, 2]));
        assert!(!d.is_topological(&[1, 0, 2]));
        assert!(!d.is_topological(&[0, 0, 2]));
        assert!(!d.is_topological(&[0, 1]));
    }
}
