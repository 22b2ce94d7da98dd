//! Terminal mobility, Rayleigh-faded path-loss channels and the uplink rate
//! under co-channel interference.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Distances below this are clamped to keep path loss finite.
pub const MIN_DISTANCE: f64 = 1.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Uniform draw over a disk centred on the origin.
    pub fn uniform_in_disk<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Self {
        let r = radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        Self::new(r * theta.cos(), r * theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub total_bandwidth: f64,
    pub subchannels: usize,
    /// Noise power in watts.
    pub noise_power: f64,
    pub path_loss_exp: f64,
}

impl RadioConfig {
    pub fn new(total_bandwidth: f64, subchannels: usize, noise_dbm: f64, path_loss_exp: f64) -> Result<Self> {
        let cfg = Self { total_bandwidth, subchannels, noise_power: dbm_to_watts(noise_dbm), path_loss_exp };
        if !(total_bandwidth > 0.0 && subchannels >= 1 && cfg.noise_power > 0.0 && path_loss_exp > 0.0) {
            return Err(SimError::Parameter(format!("invalid radio configuration {cfg:?}")));
        }
        Ok(cfg)
    }

    pub fn channel_bandwidth(&self) -> f64 {
        self.total_bandwidth / self.subchannels as f64
    }
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self::new(50e6, 8, -100.0, 4.0).expect("default radio config is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalState {
    pub position: Position,
    pub cpu_freq: f64,
    pub tx_power: f64,
    pub static_power: f64,
    /// Effective switched capacitance.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerState {
    pub position: Position,
    pub cpu_freq: f64,
    pub degradation: f64,
}

/// Random-direction mobility inside a disk arena with boundary reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mobility {
    pub speed_min: f64,
    pub speed_max: f64,
    pub arena_radius: f64,
}

impl Default for Mobility {
    fn default() -> Self {
        Self { speed_min: 1.0, speed_max: 15.0, arena_radius: 500.0 }
    }
}

/// Reflects a point that left the disk back across its boundary.
fn reflect_into_disk(p: Position, radius: f64) -> Position {
    let r = p.norm();
    if r <= radius {
        return p;
    }
    let target = (2.0 * radius - r).clamp(0.0, radius);
    Position::new(p.x / r * target, p.y / r * target)
}

pub fn step_mobility<R: Rng + ?Sized>(
    state: &TerminalState,
    dt: f64,
    mobility: &Mobility,
    rng: &mut R,
) -> TerminalState {
    // draws happen unconditionally so the stream does not depend on speeds
    let heading = 2.0 * PI * rng.random::<f64>();
    let u: f64 = rng.random();
    let speed = mobility.speed_min + u * (mobility.speed_max - mobility.speed_min);
    let step = speed.max(0.0) * dt.max(0.0);
    let moved = Position::new(state.position.x + step * heading.cos(), state.position.y + step * heading.sin());
    TerminalState { position: reflect_into_disk(moved, mobility.arena_radius), ..*state }
}

pub fn channel_gain(fading: f64, distance: f64, path_loss_exp: f64) -> f64 {
    fading * distance.max(MIN_DISTANCE).powf(-path_loss_exp)
}

/// Per-slot small-scale fading, one unit-mean exponential draw per subchannel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub slot: usize,
    pub fading: Vec<f64>,
}

impl ChannelRealization {
    pub fn draw<R: Rng + ?Sized>(slot: usize, subchannels: usize, rng: &mut R) -> Self {
        // Exp1 can return exactly zero in principle; keep the gain strictly positive
        let fading = (0..subchannels)
            .map(|_| {
                let b: f64 = Exp1.sample(rng);
                b.max(f64::MIN_POSITIVE)
            })
            .collect();
        Self { slot, fading }
    }

    pub fn unit(slot: usize, subchannels: usize) -> Self {
        Self { slot, fading: vec![1.0; subchannels] }
    }
}

/// One terminal's uplink activity in a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter {
    pub terminal: usize,
    pub cell: usize,
    pub position: Position,
    pub tx_power: f64,
    /// Row of the cell's allocation matrix.
    pub row: Vec<bool>,
}

impl Transmitter {
    pub fn assigned(&self) -> usize {
        self.row.iter().filter(|&&x| x).count()
    }

    /// Total power split evenly over the channels actually assigned.
    pub fn power_per_channel(&self) -> f64 {
        match self.assigned() {
            0 => 0.0,
            z => self.tx_power / z as f64,
        }
    }
}

/// Co-channel interference on subchannel `k` at a victim whose serving
/// station sits at `victim_server` in cell `victim_cell`.
///
/// Only transmitters attached to other cells count, each attenuated over its
/// distance to the victim's server.
pub fn interference_at(
    victim_cell: usize,
    victim_server: &Position,
    k: usize,
    transmitters: &[Transmitter],
    realization: &ChannelRealization,
    path_loss_exp: f64,
) -> f64 {
    transmitters
        .iter()
        .filter(|tx| tx.cell != victim_cell && tx.row[k])
        .map(|tx| {
            tx.power_per_channel()
                * channel_gain(realization.fading[k], tx.position.distance(victim_server), path_loss_exp)
        })
        .sum()
}

/// Uplink rate summed over the assigned subchannels of one terminal.
///
/// `gains[k]` is the terminal's channel gain to its server on channel `k` and
/// `interference[k]` the co-channel interference it sees there.
pub fn uplink_rate(row: &[bool], tx_power: f64, gains: &[f64], interference: &[f64], cfg: &RadioConfig) -> Result<f64> {
    let assigned = row.iter().filter(|&&x| x).count();
    if assigned == 0 {
        return Err(SimError::Allocation("terminal has no subchannel assigned".into()));
    }
    if row.len() != cfg.subchannels || gains.len() != row.len() || interference.len() != row.len() {
        return Err(SimError::Shape { expected: cfg.subchannels, got: row.len() });
    }
    let p = tx_power / assigned as f64;
    let bk = cfg.channel_bandwidth();
    Ok(row
        .iter()
        .zip(gains.iter().zip(interference))
        .filter(|(&x, _)| x)
        .map(|(_, (&h, &i))| bk * log2_1p(p * h / (i + cfg.noise_power)))
        .sum())
}

/// Upload time of `bits` at `rate`.
pub fn comm_time(bits: f64, rate: f64) -> Result<f64> {
    if rate.is_nan() || rate <= 0.0 {
        return Err(SimError::NonPositiveRate(rate));
    }
    Ok(bits / rate)
}

/// Interference-free rate estimate over `z` channels with the power split
/// `p/z` and unit fading, used wherever realized allocations are not yet known.
pub fn estimated_rate(z: f64, tx_power: f64, distance: f64, cfg: &RadioConfig) -> f64 {
    let h = channel_gain(1.0, distance, cfg.path_loss_exp);
    z * cfg.channel_bandwidth() * log2_1p(tx_power / z * h / cfg.noise_power)
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}
