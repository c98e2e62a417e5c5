//! Reproducibility. Kept in its own test binary because the fixed-order
//! matmul switch is process-wide.

#![allow(clippy::field_reassign_with_default)]

use stackformer::linalg::{deterministic_math, set_deterministic_math};
use stackformer::model::{Model, ModelConfig};
use stackformer::tasks::{TaskKind, Vocabulary};
use stackformer::trainer::{train, MetricRecord, TrainConfig};

fn setup() -> (Model<f32>, TrainConfig) {
    let task = TaskKind::ParityCheck;
    let mut cfg = ModelConfig::default();
    cfg.vocab_size = Vocabulary::for_task(task).len();
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_attn_heads = 2;
    cfg.ffn_dim = 32;
    cfg.stack.slots = 6;
    cfg.stack.heads = 2;
    cfg.stack.head_width = 4;
    let train_cfg = TrainConfig {
        steps: 6,
        batch_size: 4,
        warmup_steps: 2,
        train_lengths: (1, 10),
        eval_every: 3,
        val_samples: 8,
        seed: 17,
        ..TrainConfig::default()
    };
    (Model::new(cfg, 17).unwrap(), train_cfg)
}

fn run() -> (Model<f32>, Vec<MetricRecord>) {
    let (mut model, cfg) = setup();
    let mut records = Vec::new();
    train(&mut model, TaskKind::ParityCheck, &cfg, &mut |r| {
        records.push(r.clone());
        Ok(())
    })
    .unwrap();
    (model, records)
}

#[test]
fn same_seed_same_run_in_both_math_modes() {
    let (fast_a, rec_a) = run();
    let (fast_b, rec_b) = run();
    assert_eq!(fast_a.params, fast_b.params);
    assert_eq!(rec_a, rec_b);

    set_deterministic_math(true);
    assert!(deterministic_math());
    let (det_a, rec_da) = run();
    let (det_b, rec_db) = run();
    assert_eq!(det_a.params, det_b.params);
    assert_eq!(rec_da, rec_db);

    // The two kernels sum in different orders but agree closely.
    for (a, b) in rec_a.iter().zip(&rec_da) {
        assert!((a.total - b.total).abs() < 1e-4, "step {}: {} vs {}", a.step, a.total, b.total);
    }
    set_deterministic_math(false);
    assert!(!deterministic_math());
}
