//! Randomised checks of the soft update's structural invariants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::stack::{update, ActionDistribution, StackState, StructureMode};

const SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantReport {
    pub trials: usize,
    /// mask entries outside `[0, 1]`
    pub mask_bound_violations: usize,
    /// `|Σ mask' − Σ mask| > 1`
    pub mask_budget_violations: usize,
    /// a slot's max-norm exceeds `max(‖h‖∞, max_i ‖V_i‖∞)`
    pub convexity_violations: usize,
    /// input mutated or repeated calls differ
    pub purity_violations: usize,
    pub max_mask_budget_delta: f64,
    pub passed: bool,
}

fn random_action<R: Rng>(rng: &mut R) -> ActionDistribution<f64> {
    // occasionally exactly one-hot, otherwise a random softmax
    match rng.random_range(0..10) {
        0 => ActionDistribution::push(),
        1 => ActionDistribution::pop(),
        2 => ActionDistribution::noop(),
        _ => {
            let e: Vec<f64> = (0..3).map(|_| (rng.random_range(-4.0..4.0f64)).exp()).collect();
            let z: f64 = e.iter().sum();
            ActionDistribution::from_array([e[0] / z, e[1] / z, e[2] / z])
        }
    }
}

fn random_state<R: Rng>(s: usize, w: usize, rng: &mut R) -> Result<StackState<f64>> {
    let values = (0..s * w).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mask = (0..s)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..1.0),
        })
        .collect();
    StackState::from_parts(s, w, values, mask)
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn fuzz_invariants(trials: usize, seed: u64) -> Result<InvariantReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = InvariantReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let s = rng.random_range(1..=12);
        let w = rng.random_range(1..=6);
        let structure = if rng.random_bool(0.5) {
            StructureMode::Stack
        } else {
            StructureMode::Queue
        };
        let state = random_state(s, w, &mut rng)?;
        let h: Vec<f64> = (0..w).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = random_action(&mut rng);

        let snapshot = state.clone();
        let next = update(&state, &h, &a, structure)?;
        let again = update(&state, &h, &a, structure)?;
        if state != snapshot || next != again {
            r.purity_violations += 1;
        }

        if next.mask().iter().any(|&m| !(-SLACK..=1.0 + SLACK).contains(&m)) {
            r.mask_bound_violations += 1;
        }
        let delta = next.mask().iter().sum::<f64>() - state.mask().iter().sum::<f64>();
        r.max_mask_budget_delta = r.max_mask_budget_delta.max(delta.abs());
        if delta.abs() > 1.0 + SLACK {
            r.mask_budget_violations += 1;
        }

        let bound = (0..s).map(|i| inf_norm(state.slot(i))).fold(inf_norm(&h), f64::max);
        if (0..s).any(|i| inf_norm(next.slot(i)) > bound * (1.0 + SLACK) + SLACK) {
            r.convexity_violations += 1;
        }
    }
    r.passed = r.mask_bound_violations == 0
        && r.mask_budget_violations == 0
        && r.convexity_violations == 0
        && r.purity_violations == 0;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_hold() {
        let r = fuzz_invariants(2000, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_mask_budget_delta <= 1.0 + SLACK);
    }
}
