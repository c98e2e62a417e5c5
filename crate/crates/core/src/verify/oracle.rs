//! Exact discrete stack and queue, written without reference to the soft
//! implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::stack::{update, ActionDistribution, StackState, StructureMode};

#[derive(Clone, Debug, PartialEq)]
pub enum DiscreteOp {
    Push(Vec<f64>),
    Pop,
    Noop,
}

/// Bounded LIFO store with the top at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteStack {
    slots: usize,
    width: usize,
    items: Vec<Vec<f64>>,
}

impl DiscreteStack {
    pub fn new(slots: usize, width: usize) -> Self {
        Self {
            slots,
            width,
            items: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn apply(&mut self, op: &DiscreteOp) {
        match op {
            DiscreteOp::Push(v) => {
                assert_eq!(v.len(), self.width, "pushed vector width");
                self.items.insert(0, v.clone());
                self.items.truncate(self.slots);
            }
            DiscreteOp::Pop => {
                if !self.items.is_empty() {
                    self.items.remove(0);
                }
            }
            DiscreteOp::Noop => {}
        }
    }

    /// Slot contents, zero-padded to `slots × width`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows = self.items.clone();
        rows.resize(self.slots, vec![0.0; self.width]);
        rows
    }

    /// Occupancy: 1 for filled slots, 0 for the rest.
    pub fn occupancy(&self) -> Vec<f64> {
        (0..self.slots).map(|i| if i < self.items.len() { 1.0 } else { 0.0 }).collect()
    }
}

pub fn discrete_simulate(ops: &[DiscreteOp], slots: usize, width: usize) -> DiscreteStack {
    let mut s = DiscreteStack::new(slots, width);
    for op in ops {
        s.apply(op);
    }
    s
}

/// Bounded FIFO with the head at index 0. Pushing onto a full queue
/// drops the incoming element.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteQueue {
    slots: usize,
    width: usize,
    items: Vec<Vec<f64>>,
}

impl DiscreteQueue {
    pub fn new(slots: usize, width: usize) -> Self {
        Self {
            slots,
            width,
            items: Vec::new(),
        }
    }

    pub fn apply(&mut self, op: &DiscreteOp) {
        match op {
            DiscreteOp::Push(v) => {
                if self.items.len() < self.slots {
                    self.items.push(v.clone());
                }
            }
            DiscreteOp::Pop => {
                if !self.items.is_empty() {
                    self.items.remove(0);
                }
            }
            DiscreteOp::Noop => {}
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let mut rows = self.items.clone();
        rows.resize(self.slots, vec![0.0; self.width]);
        rows
    }

    pub fn occupancy(&self) -> Vec<f64> {
        (0..self.slots).map(|i| if i < self.items.len() { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub structure: StructureMode,
    pub trials: usize,
    pub ops: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn random_ops<R: Rng + ?Sized>(len: usize, width: usize, rng: &mut R) -> Vec<DiscreteOp> {
    (0..len)
        .map(|_| match rng.random_range(0..3) {
            0 => DiscreteOp::Push((0..width).map(|_| rng.random_range(-1.0..1.0)).collect()),
            1 => DiscreteOp::Pop,
            _ => DiscreteOp::Noop,
        })
        .collect()
}

fn soft_run(ops: &[DiscreteOp], slots: usize, width: usize, structure: StructureMode) -> Result<StackState<f64>> {
    let mut st = StackState::<f64>::empty(slots, width)?;
    let zero = vec![0.0; width];
    for op in ops {
        let (h, a) = match op {
            DiscreteOp::Push(v) => (v.as_slice(), ActionDistribution::push()),
            DiscreteOp::Pop => (zero.as_slice(), ActionDistribution::pop()),
            DiscreteOp::Noop => (zero.as_slice(), ActionDistribution::noop()),
        };
        st = update(&st, h, &a, structure)?;
    }
    Ok(st)
}

fn deviation(st: &StackState<f64>, rows: &[Vec<f64>], occupancy: &[f64]) -> f64 {
    let mut dev: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (a, b) in st.slot(i).iter().zip(row) {
            dev = dev.max((a - b).abs());
        }
        dev = dev.max((st.mask()[i] - occupancy[i]).abs());
    }
    dev
}

/// Runs random one-hot op sequences through the soft update and the
/// discrete oracle, comparing values and mask after every sequence.
pub fn check_hard_action_equivalence(
    trials: usize,
    max_len: usize,
    slots: usize,
    width: usize,
    seed: u64,
) -> Result<OracleReport> {
    run_equivalence(trials, max_len, slots, width, seed, StructureMode::Stack, 1e-6)
}

/// Queue counterpart of [`check_hard_action_equivalence`].
pub fn check_queue_equivalence(
    trials: usize,
    max_len: usize,
    slots: usize,
    width: usize,
    seed: u64,
) -> Result<OracleReport> {
    run_equivalence(trials, max_len, slots, width, seed, StructureMode::Queue, 1e-6)
}

fn run_equivalence(
    trials: usize,
    max_len: usize,
    slots: usize,
    width: usize,
    seed: u64,
    structure: StructureMode,
    tolerance: f64,
) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_dev: f64 = 0.0;
    let mut total_ops = 0;
    for _ in 0..trials {
        let len = rng.random_range(1..=max_len.max(1));
        let ops = random_ops(len, width, &mut rng);
        total_ops += ops.len();
        let soft = soft_run(&ops, slots, width, structure)?;
        let dev = match structure {
            StructureMode::Stack => {
                let d = discrete_simulate(&ops, slots, width);
                deviation(&soft, &d.rows(), &d.occupancy())
            }
            StructureMode::Queue => {
                let mut q = DiscreteQueue::new(slots, width);
                ops.iter().for_each(|op| q.apply(op));
                deviation(&soft, &q.rows(), &q.occupancy())
            }
        };
        max_dev = max_dev.max(dev);
    }
    Ok(OracleReport {
        structure,
        trials,
        ops: total_ops,
        max_deviation: max_dev,
        tolerance,
        passed: max_dev < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn push(x: f64) -> DiscreteOp {
        DiscreteOp::Push(vec![x])
    }

    fn column(s: &DiscreteStack) -> Vec<f64> {
        s.rows().into_iter().map(|r| r[0]).collect()
    }

    #[test]
    fn bounded_lifo() {
        assert_eq!(column(&discrete_simulate(&[push(2.), push(3.)], 3, 1)), [3., 2., 0.]);
        assert_eq!(column(&discrete_simulate(&[push(2.), push(3.), DiscreteOp::Pop], 3, 1)), [2., 0., 0.]);
        let ops: Vec<_> = (1..=4).map(|i| push(i as f64)).collect();
        assert_eq!(column(&discrete_simulate(&ops, 3, 1)), [4., 3., 2.]);
        assert_eq!(column(&discrete_simulate(&[DiscreteOp::Pop], 2, 1)), [0., 0.]);
    }

    #[test]
    fn bounded_fifo() {
        let mut q = DiscreteQueue::new(2, 1);
        for op in [push(1.), push(2.), push(3.), DiscreteOp::Pop] {
            q.apply(&op);
        }
        assert_eq!(q.rows(), vec![vec![2.], vec![0.]]);
    }

    #[test]
    fn single_push_matches_exactly() {
        let r = check_hard_action_equivalence(20, 1, 4, 3, 0).unwrap();
        assert!(r.passed);
        let ops = vec![DiscreteOp::Push(vec![0.5, -0.25])];
        let soft = soft_run(&ops, 3, 2, StructureMode::Stack).unwrap();
        let d = discrete_simulate(&ops, 3, 2);
        assert_eq!(deviation(&soft, &d.rows(), &d.occupancy()), 0.0);
    }

    #[test]
    fn soft_stack_and_queue_match_oracles() {
        assert!(check_hard_action_equivalence(100, 100, 8, 4, 1).unwrap().passed);
        let q = check_queue_equivalence(100, 100, 8, 4, 1).unwrap();
        assert!(q.passed, "{q:?}");
    }
}
