//! Independent oracles and numerical checks.

mod fuzz;
mod grad;
mod oracle;
mod task_oracle;

pub use fuzz::{fuzz_invariants, InvariantReport};
pub use grad::{gradcheck, relative_error, tiny_config, GradGroup, GradReport, GradScope};
pub use oracle::{
    check_hard_action_equivalence, check_queue_equivalence, discrete_simulate, random_ops, DiscreteOp,
    DiscreteQueue, DiscreteStack, OracleReport,
};
pub use task_oracle::{
    check_task_oracles, check_worked_examples, reference_answer, TaskAudit, TaskOracleReport, WORKED_EXAMPLES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub sequences: usize,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares a freshly initialised stack-enabled model with the same
/// weights minus the stack modules on random token sequences.
pub fn check_identity_at_init(config: &ModelConfig, sequences: usize, seed: u64) -> Result<IdentityReport> {
    let with = Model::<f32>::new(config.clone(), seed)?;
    let without = with.without_stack();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut max_diff: f64 = 0.0;
    for _ in 0..sequences {
        let n = rng.random_range(1..=config.max_seq_len.min(64));
        let tokens: Vec<u32> = (0..n).map(|_| rng.random_range(0..config.vocab_size as u32)).collect();
        let a = with.forward(&tokens)?;
        let b = without.forward(&tokens)?;
        for (x, y) in a.iter().zip(&b) {
            max_diff = max_diff.max((x - y).abs() as f64);
        }
    }
    Ok(IdentityReport {
        sequences,
        max_abs_diff: max_diff,
        tolerance: 1e-6,
        passed: max_diff <= 1e-6,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Oracle,
    Grad,
    Invariants,
    Identity,
    Tasks,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle" => Self::Oracle,
            "grad" => Self::Grad,
            "invariants" => Self::Invariants,
            "identity" => Self::Identity,
            "tasks" => Self::Tasks,
            "all" => Self::All,
            other => return Err(Error::InvalidConfig(format!("unknown verify suite `{other}`"))),
        })
    }
}

/// Machine-readable result of [`run_suite`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifySummary {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oracle: Vec<OracleReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grad: Vec<GradReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariants: Option<InvariantReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks: Option<TaskOracleReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub worked_example_failures: Vec<String>,
    pub passed: bool,
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifySummary> {
    let mut s = VerifySummary::default();
    let on = |x: Suite| suite == x || suite == Suite::All;
    if on(Suite::Oracle) {
        s.oracle.push(check_hard_action_equivalence(1000, 100, 8, 4, seed)?);
        s.oracle.push(check_queue_equivalence(1000, 100, 8, 4, seed)?);
    }
    if on(Suite::Grad) {
        for scope in GradScope::ALL {
            s.grad.push(gradcheck(scope, 1e-5, 1e-4, seed)?);
        }
    }
    if on(Suite::Invariants) {
        s.invariants = Some(fuzz_invariants(10_000, seed)?);
    }
    if on(Suite::Identity) {
        let cfg = ModelConfig {
            vocab_size: 16,
            ..Default::default()
        };
        s.identity = Some(check_identity_at_init(&cfg, 100, seed)?);
    }
    if on(Suite::Tasks) {
        s.tasks = Some(check_task_oracles(10_000, 1, 40, seed)?);
        s.worked_example_failures = check_worked_examples()?;
    }
    s.passed = s.oracle.iter().all(|r| r.passed)
        && s.grad.iter().all(|r| r.passed)
        && s.invariants.as_ref().is_none_or(|r| r.passed)
        && s.identity.as_ref().is_none_or(|r| r.passed)
        && s.tasks.as_ref().is_none_or(|r| r.passed)
        && s.worked_example_failures.is_empty();
    Ok(s)
}
