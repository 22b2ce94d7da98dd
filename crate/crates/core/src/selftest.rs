//! Runtime self-checks: knapsack solver against exhaustive enumeration and
//! network gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{loss_and_grads, DuelingQNet, Transition};
use crate::dca::{solve_gkp, GkpInstance};
use crate::error::Result;

/// Minimum total value over every way to give each group at least one item
/// and use exactly the full capacity.
pub fn brute_force_gkp(inst: &GkpInstance) -> f64 {
    fn go(inst: &GkpInstance, g: usize, left: usize) -> f64 {
        let groups = inst.groups();
        if g == groups {
            return if left == 0 { 0.0 } else { f64::INFINITY };
        }
        let still = groups - g - 1;
        let mut best = f64::INFINITY;
        for z in 1..=inst.max_items() {
            if z + still > left {
                break;
            }
            best = best.min(inst.value(g, z) + go(inst, g + 1, left - z));
        }
        best
    }
    go(inst, 0, inst.capacity())
}

/// Random instance with 1..=4 groups, capacity up to 8 and integer values.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> Result<GkpInstance> {
    let groups = rng.random_range(1..=4);
    let capacity = rng.random_range(groups..=8);
    let width = capacity - groups + 1;
    let values = (0..groups).map(|_| (0..width).map(|_| rng.random_range(0..50) as f64).collect()).collect();
    GkpInstance::new(capacity, values)
}

/// Largest relative deviation between analytic and central-difference
/// gradients of the TD loss. Relative error uses `max(|a|, |n|, 1e-6)` as
/// denominator.
pub fn gradient_check(net: &DuelingQNet, batch: &[&Transition], targets: &[f64], h: f64) -> Result<f64> {
    let (_, grads) = loss_and_grads(net, batch, targets)?;
    let analytic: Vec<f64> = grads.params().copied().collect();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.params_mut().nth(i).expect("same parameter count");
        *probe.params_mut().nth(i).expect("index in range") = orig + h;
        let (up, _) = loss_and_grads(&probe, batch, targets)?;
        *probe.params_mut().nth(i).expect("index in range") = orig - h;
        let (down, _) = loss_and_grads(&probe, batch, targets)?;
        *probe.params_mut().nth(i).expect("index in range") = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub gkp_instances: usize,
    pub gkp_mismatches: usize,
    pub gradient_max_rel_err: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.gkp_mismatches == 0 && self.gradient_max_rel_err < 1e-4
    }
}

/// Random small network and batch for gradient checks.
pub fn random_gradient_case(seed: u64) -> (DuelingQNet, Vec<Transition>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DuelingQNet::new(4, &[6, 5], 3, &mut rng);
    let batch: Vec<Transition> = (0..8)
        .map(|_| Transition {
            state: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: rng.random_range(0..3),
            reward: rng.random_range(-1.0..1.0),
            next_state: vec![0.0; 4],
            terminal: true,
        })
        .collect();
    let targets = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, batch, targets)
}

pub fn run(instances: usize, seed: u64) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng)?;
        if solve_gkp(&inst)?.value != brute_force_gkp(&inst) {
            mismatches += 1;
        }
    }
    let (net, batch, targets) = random_gradient_case(seed);
    let refs: Vec<&Transition> = batch.iter().collect();
    let err = gradient_check(&net, &refs, &targets, 1e-6)?;
    Ok(SelftestReport { gkp_instances: instances, gkp_mismatches: mismatches, gradient_max_rel_err: err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let r = run(200, 1).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn brute_force_small_case() {
        let inst = GkpInstance::new(3, vec![vec![1.0, 5.0], vec![9.0, 5.0]]).unwrap();
        assert_eq!(brute_force_gkp(&inst), 6.0);
    }
}
