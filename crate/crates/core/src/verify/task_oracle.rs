//! Second, independent derivation of every task's answer, used to audit
//! the generators. Nothing here calls into the `tasks` answer code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::tasks::{Symbol, TaskKind};

fn digit(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().filter(|d| (0..10).contains(d))
}

fn bin(s: &[&str]) -> Option<u128> {
    if s.is_empty() || s.len() > 127 {
        return None;
    }
    s.iter().try_fold(0u128, |acc, b| match *b {
        "0" => Some(acc << 1),
        "1" => Some((acc << 1) | 1),
        _ => None,
    })
}

fn bits_of(v: u128) -> Vec<String> {
    format!("{v:b}").chars().map(String::from).collect()
}

fn isqrt(n: u128) -> u128 {
    // bisection on r*r <= n
    let (mut lo, mut hi) = (0u128, 1u128 << 64);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mid.checked_mul(mid).is_some_and(|sq| sq <= n) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Shunting-yard evaluation mod 5, with prefix minus binding tighter than
/// `*`.
fn eval_mod5(tokens: &[&str], z: i64) -> Option<i64> {
    #[derive(Clone, Copy, PartialEq)]
    enum Op {
        Add,
        Sub,
        Mul,
        Neg,
        Open,
    }
    fn prec(op: Op) -> u8 {
        match op {
            Op::Add | Op::Sub => 1,
            Op::Mul => 2,
            Op::Neg => 3,
            Op::Open => 0,
        }
    }
    fn apply(op: Op, vals: &mut Vec<i64>) -> Option<()> {
        if op == Op::Neg {
            let v = vals.pop()?;
            vals.push((5 - v) % 5);
            return Some(());
        }
        let b = vals.pop()?;
        let a = vals.pop()?;
        vals.push(match op {
            Op::Add => (a + b) % 5,
            Op::Sub => (a - b + 5) % 5,
            Op::Mul => (a * b) % 5,
            _ => return None,
        });
        Some(())
    }
    let mut vals: Vec<i64> = Vec::new();
    let mut ops: Vec<Op> = Vec::new();
    let mut expect_operand = true;
    for &t in tokens {
        if expect_operand {
            match t {
                "-" => ops.push(Op::Neg),
                "(" => ops.push(Op::Open),
                "z" => {
                    vals.push(z);
                    expect_operand = false;
                }
                d => {
                    vals.push(digit(d).filter(|v| *v < 5)?);
                    expect_operand = false;
                }
            }
        } else {
            let op = match t {
                "+" => Op::Add,
                "-" => Op::Sub,
                "*" => Op::Mul,
                ")" => {
                    loop {
                        match ops.pop()? {
                            Op::Open => break,
                            op => apply(op, &mut vals)?,
                        }
                    }
                    continue;
                }
                _ => return None,
            };
            // all binary operators are left associative; prefix minus on
            // the stack always outranks them
            while let Some(&top) = ops.last() {
                if top != Op::Open && prec(top) >= prec(op) {
                    apply(ops.pop()?, &mut vals)?;
                } else {
                    break;
                }
            }
            ops.push(op);
            expect_operand = true;
        }
    }
    if expect_operand {
        return None;
    }
    while let Some(op) = ops.pop() {
        if op == Op::Open {
            return None;
        }
        apply(op, &mut vals)?;
    }
    (vals.len() == 1).then(|| vals[0])
}

/// Independent answer, or `None` when the input is malformed.
pub fn reference_answer(task: TaskKind, input: &[&str]) -> Option<Vec<String>> {
    use TaskKind::*;
    let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let boolean = |b: bool| vec![if b { "True".to_string() } else { "False".to_string() }];
    if input.is_empty() {
        return None;
    }
    Some(match task {
        // the number of ab/ba boundaries is even exactly when the string
        // starts and ends with the same symbol
        EvenPairs => boolean(input[0] == input[input.len() - 1]),
        ParityCheck => boolean(!input.iter().fold(false, |acc, s| acc ^ (*s == "b"))),
        CycleNavigation => {
            let ups = input.iter().filter(|s| **s == "1").count() as i64;
            let downs = input.iter().filter(|s| **s == "2").count() as i64;
            vec![((ups - downs).rem_euclid(5)).to_string()]
        }
        StackManipulation => {
            let mut stack = String::new();
            let mut it = input.iter().peekable();
            while let Some(s) = it.next_if(|s| **s == "a" || **s == "b") {
                stack.push_str(s);
            }
            while let Some(s) = it.next() {
                match *s {
                    "POP" => {
                        stack.pop();
                    }
                    "PUSH" => stack.push_str(it.next().filter(|x| **x == "a" || **x == "b")?),
                    _ => return None,
                }
            }
            if stack.is_empty() {
                vec!["EMPTY".to_string()]
            } else {
                stack.chars().map(String::from).collect()
            }
        }
        ReverseString => (0..input.len()).map(|i| input[input.len() - 1 - i].to_string()).collect(),
        ModularArithmetic => vec![eval_mod5(input, 0)?.to_string()],
        SolveEquation => {
            let eq = input.iter().position(|s| *s == "=")?;
            let rhs = digit(input.get(eq + 1)?)?;
            if eq + 2 != input.len() {
                return None;
            }
            let sols: Vec<i64> = (0..5).filter(|&z| eval_mod5(&input[..eq], z) == Some(rhs)).collect();
            if sols.len() != 1 {
                return None;
            }
            vec![sols[0].to_string()]
        }
        BinaryAddition | BinaryMultiplication => {
            let op = if task == BinaryAddition { "+" } else { "*" };
            let at = input.iter().position(|s| *s == op)?;
            let a = bin(&input[..at])?;
            let b = bin(&input[at + 1..])?;
            let r = if task == BinaryAddition {
                a.checked_add(b)?
            } else {
                a.checked_mul(b)?
            };
            bits_of(r)
        }
        ComputeSqrt => bits_of(isqrt(bin(input)?)),
        BucketSort => {
            let mut counts = [0usize; 10];
            for s in input {
                counts[digit(s)? as usize] += 1;
            }
            counts
                .iter()
                .enumerate()
                .flat_map(|(d, &c)| std::iter::repeat_n(d.to_string(), c))
                .collect()
        }
        DuplicateString => {
            let mut v = owned(input);
            v.extend(owned(input));
            v
        }
        MissingDuplicate => {
            if input.len() % 2 == 1 {
                return None;
            }
            let (x, y) = input.split_at(input.len() / 2);
            let missing = x.iter().zip(y).find_map(|(p, q)| match (*p, *q) {
                ("_", other) | (other, "_") => Some(other),
                _ => None,
            })?;
            vec![missing.to_string()]
        }
        OddsFirst => {
            let odd = input.iter().enumerate().filter(|(i, _)| i % 2 == 0).map(|(_, s)| s.to_string());
            let even = input.iter().enumerate().filter(|(i, _)| i % 2 == 1).map(|(_, s)| s.to_string());
            odd.chain(even).collect()
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskAudit {
    pub task: String,
    pub samples: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskOracleReport {
    pub tasks: Vec<TaskAudit>,
    pub passed: bool,
}

/// Generates `samples` inputs per task with lengths in `lo..=hi` and
/// checks every target against [`reference_answer`].
pub fn check_task_oracles(samples: usize, lo: usize, hi: usize, seed: u64) -> Result<TaskOracleReport> {
    let mut tasks = Vec::with_capacity(TaskKind::ALL.len());
    for (k, task) in TaskKind::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let batch = crate::tasks::batch(task, lo, hi, samples, &mut rng)?;
        let mut audit = TaskAudit {
            task: task.name().to_string(),
            samples: batch.len(),
            mismatches: 0,
            first_mismatch: None,
        };
        for s in &batch {
            let want = reference_answer(task, &s.input);
            let got: Vec<String> = s.target.iter().map(|x| x.to_string()).collect();
            if want.as_ref() != Some(&got) {
                audit.mismatches += 1;
                audit.first_mismatch.get_or_insert_with(|| {
                    format!("{} -> {} (reference {:?})", s.input.join(" "), got.join(" "), want)
                });
            }
        }
        tasks.push(audit);
    }
    let passed = tasks.iter().all(|t| t.mismatches == 0);
    Ok(TaskOracleReport { tasks, passed })
}

/// Published input/output pairs, one per task where the published pair
/// is internally consistent. Inputs and outputs are whitespace-separated
/// symbols.
pub const WORKED_EXAMPLES: &[(TaskKind, &str, &str)] = &[
    (TaskKind::EvenPairs, "a a b b a", "True"),
    (TaskKind::ParityCheck, "a a a b b a", "True"),
    (TaskKind::CycleNavigation, "0 1 1 2 1 0", "2"),
    (TaskKind::StackManipulation, "a b b a a POP PUSH a POP", "a b b a"),
    (TaskKind::ReverseString, "a a b b a", "a b b a a"),
    (TaskKind::ModularArithmetic, "- ( 1 - 2 ) * ( 4 - 3 * ( - 2 ) )", "0"),
    (TaskKind::BinaryAddition, "1 0 0 1 0 + 1 0 1", "1 0 1 1 1"),
    (TaskKind::BucketSort, "4 2 1 3 0 2 2 1 4", "0 1 1 2 2 2 3 4 4"),
    (TaskKind::DuplicateString, "a b a a b", "a b a a b a b a a b"),
    (TaskKind::MissingDuplicate, "a b _ a b a", "a"),
    (TaskKind::OddsFirst, "a a a b a a", "a a a a b a"),
];

/// Checks each worked example against the task generator's answer
/// function. Returns the examples that disagree.
pub fn check_worked_examples() -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for &(task, input, output) in WORKED_EXAMPLES {
        let syms: Vec<Symbol> = input
            .split_whitespace()
            .map(|s| intern(task, s))
            .collect::<Result<_>>()?;
        let got = task.answer(&syms)?;
        if got.join(" ") != output {
            bad.push(format!("{task}: {input} -> {} (expected {output})", got.join(" ")));
        }
    }
    Ok(bad)
}

fn intern(task: TaskKind, s: &str) -> Result<Symbol> {
    task.input_alphabet()
        .iter()
        .find(|x| **x == s)
        .copied()
        .ok_or_else(|| crate::Error::UnknownSymbol(s.to_string()))
}
