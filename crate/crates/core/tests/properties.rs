use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stackformer::multihead::{init_params, mh_step, MultiHeadStackState};
use stackformer::stack::{update, ActionDistribution, StackModes, StackState, StructureMode};
use stackformer::tasks::{decode, encode, TaskKind, Vocabulary};
use stackformer::verify::{discrete_simulate, DiscreteOp};

const S: usize = 5;
const W: usize = 3;

fn action() -> impl Strategy<Value = [f64; 3]> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c)| {
        let s = a + b + c + 1e-9;
        [a / s, b / s, 1.0 - a / s - b / s]
    })
}

fn state() -> impl Strategy<Value = StackState<f64>> {
    (
        proptest::collection::vec(-3.0..3.0f64, S * W),
        proptest::collection::vec(0.0..1.0f64, S),
    )
        .prop_map(|(v, m)| StackState::from_parts(S, W, v, m).unwrap())
}

fn op() -> impl Strategy<Value = DiscreteOp> {
    prop_oneof![
        proptest::collection::vec(-2.0..2.0f64, W).prop_map(DiscreteOp::Push),
        Just(DiscreteOp::Pop),
        Just(DiscreteOp::Noop),
    ]
}

fn slot_norm(st: &StackState<f64>, i: usize) -> f64 {
    st.slot(i).iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #[test]
    fn soft_update_keeps_mask_in_unit_interval(st in state(), a in action(), h in proptest::collection::vec(-3.0..3.0f64, W), queue in any::<bool>()) {
        let structure = if queue { StructureMode::Queue } else { StructureMode::Stack };
        let ad = ActionDistribution::from_array(a);
        let next = update(&st, &h, &ad, structure).unwrap();
        for &m in next.mask() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&m));
        }
        let delta: f64 = next.mask().iter().sum::<f64>() - st.mask().iter().sum::<f64>();
        prop_assert!(delta.abs() <= 1.0 + 1e-12);
        // purity: same inputs, same output, input untouched
        prop_assert_eq!(&update(&st, &h, &ad, structure).unwrap(), &next);
    }

    #[test]
    fn soft_stack_slots_are_convex_mixtures(st in state(), a in action(), h in proptest::collection::vec(-3.0..3.0f64, W)) {
        let next = update(&st, &h, &ActionDistribution::from_array(a), StructureMode::Stack).unwrap();
        let hn = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..S {
            let push = if i == 0 { hn } else { slot_norm(&st, i - 1) };
            let pop = if i + 1 < S { slot_norm(&st, i + 1) } else { 0.0 };
            let bound = a[0] * push + a[1] * pop + a[2] * slot_norm(&st, i);
            prop_assert!(slot_norm(&next, i) <= bound + 1e-12);
        }
    }

    #[test]
    fn one_hot_actions_follow_the_discrete_stack(ops in proptest::collection::vec(op(), 0..30)) {
        let mut st = StackState::<f64>::empty(S, W).unwrap();
        for o in &ops {
            let (a, h) = match o {
                DiscreteOp::Push(v) => (ActionDistribution::push(), v.clone()),
                DiscreteOp::Pop => (ActionDistribution::pop(), vec![0.5; W]),
                DiscreteOp::Noop => (ActionDistribution::noop(), vec![-0.5; W]),
            };
            st = update(&st, &h, &a, StructureMode::Stack).unwrap();
        }
        let want = discrete_simulate(&ops, S, W);
        for (i, row) in want.rows().iter().enumerate() {
            prop_assert_eq!(st.slot(i), &row[..]);
        }
        prop_assert_eq!(st.mask(), &want.occupancy()[..]);
    }

    #[test]
    fn multihead_is_identity_at_init(seed in any::<u64>(), h in proptest::collection::vec(-5.0..5.0f64, 12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_params::<f64, _>(12, 3, 2, 4, StackModes::default(), &mut rng).unwrap();
        let out = mh_step(&MultiHeadStackState::for_params(&p), &h, &p).unwrap();
        prop_assert_eq!(out.hidden, h);
        for a in &out.actions {
            let s: f64 = a.as_array().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_encode_and_decode(seed in any::<u64>(), idx in 0..TaskKind::ALL.len(), len in 1usize..30) {
        let task = TaskKind::ALL[idx];
        prop_assume!(task.supports_length(len));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = task.generate(len, &mut rng).unwrap();
        prop_assert_eq!(s.input.len(), len);
        prop_assert_eq!(&task.answer(&s.input).unwrap(), &s.target);
        let vocab = Vocabulary::for_task(task);
        let e = encode(&s, &vocab).unwrap();
        prop_assert_eq!(decode(task, &e.tokens, &vocab).unwrap(), s);
    }
}
