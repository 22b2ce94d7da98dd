//! Dueling double deep-Q offloading agent.

pub mod adam;
pub mod checkpoint;
pub mod net;
pub mod replay;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
pub use adam::Adam;
pub use net::{argmax, dueling_q, Dense, DuelingQNet};
pub use replay::{ReplayBuffer, Transition};

/// What the target-network refresh period counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncUnit {
    LearningSteps,
    Episodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    /// Linear decrement per exploratory decision.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_update: u64,
    pub target_sync: SyncUnit,
    pub hidden: Vec<usize>,
    /// One network for all terminals instead of one per terminal.
    pub shared_network: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_decay: 1.5e-5,
            epsilon_min: 0.03,
            buffer_capacity: 1_000_000,
            batch_size: 128,
            target_update: 30,
            target_sync: SyncUnit::LearningSteps,
            hidden: vec![128, 128],
            shared_network: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && (0.0..=1.0).contains(&self.epsilon_start)
            && self.epsilon_decay >= 0.0
            && (0.0..=self.epsilon_start).contains(&self.epsilon_min)
            && self.buffer_capacity > 0
            && self.batch_size > 0
            && self.target_update > 0
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid agent configuration {self:?}")))
        }
    }
}

/// Exploration rate after `step` exploratory decisions.
pub fn epsilon_at(step: u64, cfg: &AgentConfig) -> f64 {
    (cfg.epsilon_start - step as f64 * cfg.epsilon_decay).max(cfg.epsilon_min)
}

pub fn act_epsilon_greedy<R: Rng + ?Sized>(
    net: &DuelingQNet,
    state: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    // the uniform draw is always consumed so the stream is independent of epsilon
    let explore = rng.random::<f64>() < epsilon;
    let random_action = rng.random_range(0..net.actions());
    if explore {
        Ok(random_action)
    } else {
        Ok(argmax(&net.q_values(state)?))
    }
}

/// Double-Q target: the main network picks the next action, the target
/// network values it. No bootstrap past a terminal transition.
pub fn double_q_target(
    main: &DuelingQNet,
    target: &DuelingQNet,
    reward: f64,
    next_state: &[f64],
    terminal: bool,
    gamma: f64,
) -> Result<f64> {
    if terminal {
        return Ok(reward);
    }
    let a = argmax(&main.q_values(next_state)?);
    Ok(reward + gamma * target.q_values(next_state)?[a])
}

/// Single-network target `r + gamma * max_a Q(s', a)`.
pub fn dqn_target(target: &DuelingQNet, reward: f64, next_state: &[f64], terminal: bool, gamma: f64) -> Result<f64> {
    if terminal {
        return Ok(reward);
    }
    let q = target.q_values(next_state)?;
    Ok(reward + gamma * q[argmax(&q)])
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = rows.flatten().collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).map_err(|_| SimError::Shape { expected: width, got: 0 })
}

/// Batched double-Q targets.
pub fn td_targets(main: &DuelingQNet, target: &DuelingQNet, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let dim = main.state_dim();
    if let Some(bad) = batch.iter().find(|t| t.next_state.len() != dim) {
        return Err(SimError::Shape { expected: dim, got: bad.next_state.len() });
    }
    let next = stack(batch.iter().map(|t| t.next_state.clone()), dim)?;
    let q_main = main.forward_batch(&next.view())?.q;
    let q_target = target.forward_batch(&next.view())?.q;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                t.reward
            } else {
                let row = q_main.row(i);
                let a = argmax(row.as_slice().expect("standard layout"));
                t.reward + gamma * q_target[[i, a]]
            }
        })
        .collect())
}

/// Mean of `0.5 (y - Q(s, a))^2` over the batch and its parameter gradient.
pub fn loss_and_grads(net: &DuelingQNet, batch: &[&Transition], targets: &[f64]) -> Result<(f64, DuelingQNet)> {
    let dim = net.state_dim();
    if batch.is_empty() {
        return Err(SimError::Parameter("empty training batch".into()));
    }
    if let Some(bad) = batch.iter().find(|t| t.state.len() != dim) {
        return Err(SimError::Shape { expected: dim, got: bad.state.len() });
    }
    if let Some(bad) = batch.iter().find(|t| t.action >= net.actions()) {
        return Err(SimError::Shape { expected: net.actions(), got: bad.action });
    }
    let states = stack(batch.iter().map(|t| t.state.clone()), dim)?;
    let cache = net.forward_batch(&states.view())?;
    let n = batch.len() as f64;
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut loss = 0.0;
    for (i, (t, &y)) in batch.iter().zip(targets).enumerate() {
        let err = cache.q[[i, t.action]] - y;
        loss += 0.5 * err * err;
        dq[[i, t.action]] = err / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(SimError::NumericalFailure);
    }
    Ok((loss, net.backward(&cache, &dq)))
}

/// One optimizer step on the squared TD error of `batch`.
pub fn td_update(
    main: &mut DuelingQNet,
    target: &DuelingQNet,
    adam: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    let targets = td_targets(main, target, batch, gamma)?;
    let (loss, grads) = loss_and_grads(main, batch, &targets)?;
    adam.step(main, &grads);
    Ok(loss)
}

/// A main/target network pair with its optimizer and experience pool.
#[derive(Debug, Clone)]
pub struct D3qnAgent {
    pub cfg: AgentConfig,
    pub main: DuelingQNet,
    pub target: DuelingQNet,
    adam: Adam,
    buffer: ReplayBuffer,
    decisions: u64,
    learn_steps: u64,
    episodes: u64,
    rng: ChaCha8Rng,
}

impl D3qnAgent {
    pub fn new(cfg: AgentConfig, state_dim: usize, actions: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let main = DuelingQNet::new(state_dim, &cfg.hidden, actions, &mut rng);
        Ok(Self::from_network(cfg, main, rng))
    }

    pub fn from_network(cfg: AgentConfig, main: DuelingQNet, rng: ChaCha8Rng) -> Self {
        Self {
            target: main.clone(),
            adam: Adam::new(cfg.learning_rate, main.param_count()),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            main,
            cfg,
            decisions: 0,
            learn_steps: 0,
            episodes: 0,
            rng,
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.decisions, &self.cfg)
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Epsilon-greedy when `explore`, otherwise greedy.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<usize> {
        if explore {
            let eps = self.epsilon();
            self.decisions += 1;
            act_epsilon_greedy(&self.main, state, eps, &mut self.rng)
        } else {
            self.greedy(state)
        }
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.main.q_values(state)?))
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One gradient step once the pool holds a full batch.
    pub fn learn(&mut self) -> Result<Option<f64>> {
        let Self { buffer, rng, main, target, adam, cfg, .. } = self;
        let Some(batch) = buffer.sample(cfg.batch_size, rng) else {
            return Ok(None);
        };
        let loss = td_update(main, target, adam, &batch, cfg.gamma)?;
        self.learn_steps += 1;
        if self.cfg.target_sync == SyncUnit::LearningSteps && self.learn_steps.is_multiple_of(self.cfg.target_update) {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn end_episode(&mut self) {
        self.episodes += 1;
        if self.cfg.target_sync == SyncUnit::Episodes && self.episodes.is_multiple_of(self.cfg.target_update) {
            self.sync_target();
        }
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.main);
    }
}

/// The agents driving a set of terminals: either one shared network or one
/// network per terminal.
#[derive(Debug, Clone)]
pub struct AgentPool {
    agents: Vec<D3qnAgent>,
    shared: bool,
}

impl AgentPool {
    pub fn new(cfg: &AgentConfig, terminals: usize, state_dim: usize, actions: usize, seed: u64) -> Result<Self> {
        let count = if cfg.shared_network { 1 } else { terminals };
        let agents = (0..count)
            .map(|i| D3qnAgent::new(cfg.clone(), state_dim, actions, seed.wrapping_add(i as u64 * 0x9E37_79B9)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { agents, shared: cfg.shared_network })
    }

    pub fn from_agents(agents: Vec<D3qnAgent>, shared: bool) -> Self {
        Self { agents, shared }
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn agents(&self) -> &[D3qnAgent] {
        &self.agents
    }

    pub fn agent(&self, terminal: usize) -> &D3qnAgent {
        if self.shared {
            &self.agents[0]
        } else {
            &self.agents[terminal % self.agents.len()]
        }
    }

    pub fn agent_mut(&mut self, terminal: usize) -> &mut D3qnAgent {
        if self.shared {
            &mut self.agents[0]
        } else {
            let n = self.agents.len();
            &mut self.agents[terminal % n]
        }
    }

    pub fn actions(&self) -> usize {
        self.agents[0].main.actions()
    }

    /// Runs one learning step on every underlying agent and returns the
    /// losses of the steps that ran.
    pub fn learn(&mut self) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        for a in &mut self.agents {
            losses.extend(a.learn()?);
        }
        Ok(losses)
    }

    pub fn end_episode(&mut self) {
        self.agents.iter_mut().for_each(D3qnAgent::end_episode);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> AgentConfig {
        AgentConfig { hidden: vec![8, 8], batch_size: 4, ..AgentConfig::default() }
    }

    fn random_transitions(n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random_range(0..3),
                reward: rng.random_range(-1.0..1.0),
                next_state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                terminal: i % 3 == 0,
            })
            .collect()
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 1.0);
        assert!((epsilon_at(10_000, &cfg) - 0.85).abs() < 1e-12);
        assert_eq!(epsilon_at(1_000_000, &cfg), 0.03);
        let mut last = f64::INFINITY;
        for s in (0..100_000).step_by(997) {
            let e = epsilon_at(s, &cfg);
            assert!(e <= last && e >= cfg.epsilon_min);
            last = e;
        }
    }

    #[test]
    fn greedy_and_uniform_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DuelingQNet::new(4, &[8], 3, &mut rng);
        let s = [0.1, 0.2, 0.3, 0.4];
        let best = argmax(&net.q_values(&s).unwrap());
        for _ in 0..100 {
            assert_eq!(act_epsilon_greedy(&net, &s, 0.0, &mut rng).unwrap(), best);
        }
        // epsilon = 1: multinomial counts within 3 sigma of n/3
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[act_epsilon_greedy(&net, &s, 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn double_target_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let main = DuelingQNet::new(4, &[8], 3, &mut rng);
        let target = DuelingQNet::new(4, &[8], 3, &mut rng);
        let s = [0.5, -0.5, 0.25, 0.0];
        assert_eq!(double_q_target(&main, &target, 1.0, &s, true, 0.99).unwrap(), 1.0);
        let a = argmax(&main.q_values(&s).unwrap());
        let expected = 1.0 + 0.99 * target.q_values(&s).unwrap()[a];
        assert_eq!(double_q_target(&main, &target, 1.0, &s, false, 0.99).unwrap(), expected);
        // identical networks: double target equals the plain max target
        assert_eq!(
            double_q_target(&main, &main, 0.3, &s, false, 0.99).unwrap(),
            dqn_target(&main, 0.3, &s, false, 0.99).unwrap()
        );
    }

    #[test]
    fn batched_targets_match_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let main = DuelingQNet::new(4, &[8, 8], 3, &mut rng);
        let target = DuelingQNet::new(4, &[8, 8], 3, &mut rng);
        let ts = random_transitions(10, &mut rng);
        let refs: Vec<&Transition> = ts.iter().collect();
        let ys = td_targets(&main, &target, &refs, 0.9).unwrap();
        for (t, y) in ts.iter().zip(ys) {
            let single = double_q_target(&main, &target, t.reward, &t.next_state, t.terminal, 0.9).unwrap();
            assert!((single - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_error_batch_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DuelingQNet::new(4, &[8], 3, &mut rng);
        let ts = random_transitions(5, &mut rng);
        let refs: Vec<&Transition> = ts.iter().collect();
        let ys: Vec<f64> = ts.iter().map(|t| net.q_values(&t.state).unwrap()[t.action]).collect();
        let (loss, grads) = loss_and_grads(&net, &refs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.params().all(|&g| g == 0.0));
        let mut moved = net.clone();
        let mut adam = Adam::new(1e-3, net.param_count());
        adam.step(&mut moved, &grads);
        assert_eq!(moved, net);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DuelingQNet::new(4, &[8], 3, &mut rng);
        let ts = random_transitions(2, &mut rng);
        let refs: Vec<&Transition> = ts.iter().collect();
        assert!(matches!(loss_and_grads(&net, &refs, &[f64::NAN, 0.0]), Err(SimError::NumericalFailure)));
    }

    #[test]
    fn learning_waits_for_a_full_batch_and_syncs_on_schedule() {
        let cfg = AgentConfig { target_update: 2, ..small_cfg() };
        let mut agent = D3qnAgent::new(cfg, 4, 3, 9).unwrap();
        assert_eq!(agent.main, agent.target);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in random_transitions(3, &mut rng) {
            agent.remember(t);
        }
        assert_eq!(agent.learn().unwrap(), None);
        assert_eq!(agent.main, agent.target);
        for t in random_transitions(3, &mut rng) {
            agent.remember(t);
        }
        assert!(agent.learn().unwrap().is_some());
        assert_ne!(agent.main, agent.target);
        let frozen = agent.target.clone();
        assert!(agent.learn().unwrap().is_some());
        // second learning step hits the sync period
        assert_eq!(agent.main, agent.target);
        assert_ne!(agent.target, frozen);
    }

    #[test]
    fn sync_target_is_a_hard_copy() {
        let mut agent = D3qnAgent::new(small_cfg(), 4, 3, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in random_transitions(8, &mut rng) {
            agent.remember(t);
        }
        agent.learn().unwrap();
        agent.sync_target();
        for _ in 0..20 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(agent.main.q_values(&s).unwrap(), agent.target.q_values(&s).unwrap());
        }
    }

    #[test]
    fn pool_sharing() {
        let shared = AgentPool::new(&small_cfg(), 5, 4, 3, 1).unwrap();
        assert_eq!(shared.agents().len(), 1);
        let separate = AgentPool::new(&AgentConfig { shared_network: false, ..small_cfg() }, 5, 4, 3, 1).unwrap();
        assert_eq!(separate.agents().len(), 5);
        assert_ne!(separate.agent(0).main, separate.agent(1).main);
    }
}
