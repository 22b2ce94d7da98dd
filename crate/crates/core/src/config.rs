//! Simulation configuration, loadable from a sectioned `key = value` file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::dag::DagGenerator;
use crate::error::{Result, SimError};
use crate::radio::{Mobility, RadioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSection {
    pub terminals: usize,
    pub servers: usize,
    pub subchannels: usize,
    pub arena_radius: f64,
    /// Servers sit evenly on a circle of this radius (a single server sits at
    /// the centre).
    pub server_ring_radius: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { terminals: 5, servers: 3, subchannels: 8, arena_radius: 500.0, server_ring_radius: 250.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioSection {
    pub total_bandwidth: f64,
    pub noise_dbm: f64,
    pub path_loss_exp: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self { total_bandwidth: 50e6, noise_dbm: -100.0, path_loss_exp: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeSection {
    pub server_freq: f64,
    pub degradation: f64,
    pub terminal_freq_min: f64,
    pub terminal_freq_max: f64,
    pub tx_power_min: f64,
    pub tx_power_max: f64,
    pub static_power: f64,
    pub kappa: f64,
}

impl Default for ComputeSection {
    fn default() -> Self {
        Self {
            server_freq: 5e9,
            degradation: 0.2,
            terminal_freq_min: 1.0e9,
            terminal_freq_max: 1.2e9,
            tx_power_min: 1.0,
            tx_power_max: 1.5,
            static_power: 0.3,
            kappa: 1e-27,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilitySection {
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self { speed_min: 1.0, speed_max: 15.0 }
    }
}

/// Which offloaders a cell serves when more request it than it has channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionRule {
    /// Highest task priority first; the rest run locally for the slot.
    Priority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    pub omega: f64,
    pub admission: AdmissionRule,
    pub seg_max_iters: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { omega: 0.5, admission: AdmissionRule::Priority, seg_max_iters: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub network: NetworkSection,
    pub radio: RadioSection,
    pub compute: ComputeSection,
    pub mobility: MobilitySection,
    pub dag: DagGenerator,
    pub policy: PolicySection,
    pub agent: AgentConfig,
}

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SimError::Config(what.to_string()))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        check(n.terminals >= 1, "need at least one terminal")?;
        check(n.servers >= 1, "need at least one server")?;
        check(n.subchannels >= 1, "need at least one subchannel")?;
        check(n.arena_radius > 0.0, "arena radius must be positive")?;
        check((0.0..=n.arena_radius).contains(&n.server_ring_radius), "server ring must lie inside the arena")?;
        let c = &self.compute;
        check(c.server_freq > 0.0, "server frequency must be positive")?;
        check(c.degradation >= 0.0, "degradation must be non-negative")?;
        check(c.terminal_freq_min > 0.0 && c.terminal_freq_min <= c.terminal_freq_max, "terminal frequency range")?;
        check(c.tx_power_min > 0.0 && c.tx_power_min <= c.tx_power_max, "transmit power range")?;
        check(c.static_power >= 0.0, "static power must be non-negative")?;
        check(c.kappa > 0.0, "kappa must be positive")?;
        let m = &self.mobility;
        check(m.speed_min >= 0.0 && m.speed_min <= m.speed_max, "speed range")?;
        check((0.0..=1.0).contains(&self.policy.omega), "omega must lie in [0, 1]")?;
        self.dag.validate()?;
        self.agent.validate()?;
        self.radio_config()?;
        Ok(())
    }

    pub fn radio_config(&self) -> Result<RadioConfig> {
        RadioConfig::new(
            self.radio.total_bandwidth,
            self.network.subchannels,
            self.radio.noise_dbm,
            self.radio.path_loss_exp,
        )
    }

    pub fn mobility(&self) -> Mobility {
        Mobility {
            speed_min: self.mobility.speed_min,
            speed_max: self.mobility.speed_max,
            arena_radius: self.network.arena_radius,
        }
    }

    /// Action count: local plus one per server.
    pub fn actions(&self) -> usize {
        self.network.servers + 1
    }

    pub fn omega(&self) -> f64 {
        self.policy.omega
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical echo, hex encoded.
    pub fn hash_hex(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sets a named sweep parameter.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(SimError::Config(format!("{name} needs a positive integer, got {value}")))
            }
        };
        match name {
            "bandwidth" => self.radio.total_bandwidth = value,
            "fm" | "server_freq" => self.compute.server_freq = value,
            "omega" => self.policy.omega = value,
            "subchannels" => self.network.subchannels = as_count()?,
            "servers" => self.network.servers = as_count()?,
            "terminals" => self.network.terminals = as_count()?,
            "tasks" => self.dag.n_tasks = as_count()?,
            "learning_rate" => self.agent.learning_rate = value,
            other => return Err(SimError::Config(format!("unknown sweep parameter `{other}`"))),
        }
        self.validate()
    }
}
