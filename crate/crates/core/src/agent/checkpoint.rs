//! Plain-text checkpoint of trained networks.
//!
//! Layout:
//!
//! ```text
//! mecsim-d3qn-checkpoint 1
//! state_dim 4
//! actions 4
//! shared true
//! networks 1
//! begin config
//! <agent configuration as TOML>
//! end config
//! network 0 layers 4
//! layer 4 128
//! w <inputs*outputs values, row-major>
//! b <outputs values>
//! ...
//! ```
//!
//! Values use the shortest round-trip decimal form, so a reload reproduces
//! every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AgentConfig, AgentPool, D3qnAgent, Dense, DuelingQNet};
use crate::error::{Result, SimError};

const MAGIC: &str = "mecsim-d3qn-checkpoint";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> SimError {
    SimError::Checkpoint(msg.into())
}

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:e}").expect("writing to a String");
    }
    s
}

pub fn to_checkpoint_string(pool: &AgentPool) -> String {
    let first = &pool.agents()[0];
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "state_dim {}", first.main.state_dim()).unwrap();
    writeln!(out, "actions {}", first.main.actions()).unwrap();
    writeln!(out, "shared {}", pool.is_shared()).unwrap();
    writeln!(out, "networks {}", pool.agents().len()).unwrap();
    writeln!(out, "begin config").unwrap();
    out.push_str(&toml::to_string(&first.cfg).expect("agent config serializes"));
    writeln!(out, "end config").unwrap();
    for (i, agent) in pool.agents().iter().enumerate() {
        writeln!(out, "network {i} layers {}", agent.main.layers.len()).unwrap();
        for layer in &agent.main.layers {
            writeln!(out, "layer {} {}", layer.inputs(), layer.outputs()).unwrap();
            writeln!(out, "w {}", join(layer.w.iter().copied())).unwrap();
            writeln!(out, "b {}", join(layer.b.iter().copied())).unwrap();
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| bad("unexpected end of file"))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (no, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(format!("line {no}: expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let parts = self.keyed(key)?;
        parts.first().and_then(|p| p.parse().ok()).ok_or_else(|| bad(format!("`{key}` needs a value")))
    }
}

fn parse_values(parts: &[&str], expected: usize) -> Result<Vec<f64>> {
    if parts.len() != expected {
        return Err(bad(format!("expected {expected} values, found {}", parts.len())));
    }
    parts.iter().map(|p| p.parse::<f64>().map_err(|e| bad(format!("bad number `{p}`: {e}")))).collect()
}

/// Rebuilds an agent pool for evaluation; optimizer state and replay memory
/// start empty and each target network equals its main network.
pub fn from_checkpoint_str(text: &str) -> Result<AgentPool> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let header = lines.keyed(MAGIC)?;
    match header.first().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(bad(format!("unsupported checkpoint version {other:?}"))),
    }
    let state_dim: usize = lines.number("state_dim")?;
    let actions: usize = lines.number("actions")?;
    let shared: bool = lines.number("shared")?;
    let networks: usize = lines.number("networks")?;
    lines.keyed("begin")?;
    let mut cfg_text = String::new();
    loop {
        let (_, line) = lines.next()?;
        if line == "end config" {
            break;
        }
        cfg_text.push_str(line);
        cfg_text.push('\n');
    }
    let cfg: AgentConfig = toml::from_str(&cfg_text).map_err(|e| bad(format!("config block: {e}")))?;

    let mut agents = Vec::with_capacity(networks);
    for i in 0..networks {
        let head = lines.keyed("network")?;
        if head.first().and_then(|v| v.parse::<usize>().ok()) != Some(i) || head.get(1) != Some(&"layers") {
            return Err(bad(format!("malformed header for network {i}")));
        }
        let count: usize = head.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("layer count"))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let dims = lines.keyed("layer")?;
            let parsed: Vec<usize> = dims.iter().filter_map(|d| d.parse().ok()).collect();
            let [inputs, outputs] = parsed[..] else {
                return Err(bad("layer needs two dimensions"));
            };
            let w = parse_values(&lines.keyed("w")?, inputs * outputs)?;
            let b = parse_values(&lines.keyed("b")?, outputs)?;
            layers.push(Dense {
                w: Array2::from_shape_vec((inputs, outputs), w).map_err(|e| bad(e.to_string()))?,
                b: Array1::from(b),
            });
        }
        let net = DuelingQNet::from_layers(layers)?;
        if net.state_dim() != state_dim || net.actions() != actions {
            return Err(bad("network shape disagrees with header"));
        }
        agents.push(D3qnAgent::from_network(cfg.clone(), net, ChaCha8Rng::seed_from_u64(i as u64)));
    }
    if agents.is_empty() {
        return Err(bad("checkpoint holds no network"));
    }
    Ok(AgentPool::from_agents(agents, shared))
}

pub fn save(pool: &AgentPool, path: &Path) -> Result<()> {
    std::fs::write(path, to_checkpoint_string(pool))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<AgentPool> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    from_checkpoint_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = AgentConfig { hidden: vec![16, 8], shared_network: false, ..AgentConfig::default() };
        let pool = AgentPool::new(&cfg, 2, 4, 3, 77).unwrap();
        let text = to_checkpoint_string(&pool);
        let back = from_checkpoint_str(&text).unwrap();
        assert_eq!(back.agents().len(), 2);
        assert!(!back.is_shared());
        assert_eq!(back.agents()[0].cfg, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (a, b) in pool.agents().iter().zip(back.agents()) {
            assert_eq!(a.main, b.main);
            for _ in 0..10 {
                let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (qa, qb) = (a.main.q_values(&s).unwrap(), b.main.q_values(&s).unwrap());
                assert!(qa.iter().zip(&qb).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert_eq!(to_checkpoint_string(&back), text);
    }

    #[test]
    fn rejects_corruption() {
        let pool = AgentPool::new(&AgentConfig { hidden: vec![4], ..AgentConfig::default() }, 1, 4, 2, 1).unwrap();
        let text = to_checkpoint_string(&pool);
        assert!(from_checkpoint_str("").is_err());
        assert!(from_checkpoint_str(&text.replace("mecsim-d3qn-checkpoint 1", "mecsim-d3qn-checkpoint 9")).is_err());
        assert!(from_checkpoint_str(&text.replace("layer 4 4", "layer 4 5")).is_err());
        let truncated: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(from_checkpoint_str(&truncated).is_err());
    }
}
