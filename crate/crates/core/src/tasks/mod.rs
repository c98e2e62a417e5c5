//! Chomsky-hierarchy sequence-mapping tasks.
//!
//! Every task maps an input string to an output string. A sample's
//! `length` is its number of input tokens; multi-operand tasks split that
//! budget uniformly at random between operands. Samples are serialised
//! for the model as `BOS input SEP target EOS`.

mod bits;
mod expr;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task symbols are interned static strings.
pub type Symbol = &'static str;

pub const PAD: Symbol = "<pad>";
pub const BOS: Symbol = "<bos>";
pub const SEP: Symbol = "<sep>";
pub const EOS: Symbol = "<eos>";
pub const CONTROL: [Symbol; 4] = [PAD, BOS, SEP, EOS];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

const AB: &[Symbol] = &["a", "b"];
const BOOL: &[Symbol] = &["True", "False"];
const BINARY: &[Symbol] = &["0", "1"];
const DIGITS: &[Symbol] = &expr::DIGITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    /// regular
    #[serde(rename = "RE")]
    Regular,
    /// deterministic context-free
    #[serde(rename = "DCF")]
    DeterministicContextFree,
    /// context-sensitive
    #[serde(rename = "CS")]
    ContextSensitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    EvenPairs,
    ParityCheck,
    CycleNavigation,
    StackManipulation,
    ReverseString,
    ModularArithmetic,
    SolveEquation,
    BinaryAddition,
    BinaryMultiplication,
    ComputeSqrt,
    BucketSort,
    DuplicateString,
    MissingDuplicate,
    OddsFirst,
}

/// Static description of a task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub name: &'static str,
    pub level: Level,
    pub input_alphabet: &'static [Symbol],
    pub output_alphabet: &'static [Symbol],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Sample {
    pub task: TaskKind,
    pub input: Vec<Symbol>,
    pub target: Vec<Symbol>,
    pub length: usize,
}

impl TaskKind {
    pub const ALL: [TaskKind; 14] = [
        TaskKind::EvenPairs,
        TaskKind::ParityCheck,
        TaskKind::CycleNavigation,
        TaskKind::StackManipulation,
        TaskKind::ReverseString,
        TaskKind::ModularArithmetic,
        TaskKind::SolveEquation,
        TaskKind::BinaryAddition,
        TaskKind::BinaryMultiplication,
        TaskKind::ComputeSqrt,
        TaskKind::BucketSort,
        TaskKind::DuplicateString,
        TaskKind::MissingDuplicate,
        TaskKind::OddsFirst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::EvenPairs => "even_pairs",
            TaskKind::ParityCheck => "parity_check",
            TaskKind::CycleNavigation => "cycle_navigation",
            TaskKind::StackManipulation => "stack_manipulation",
            TaskKind::ReverseString => "reverse_string",
            TaskKind::ModularArithmetic => "modular_arithmetic",
            TaskKind::SolveEquation => "solve_equation",
            TaskKind::BinaryAddition => "binary_addition",
            TaskKind::BinaryMultiplication => "binary_multiplication",
            TaskKind::ComputeSqrt => "compute_sqrt",
            TaskKind::BucketSort => "bucket_sort",
            TaskKind::DuplicateString => "duplicate_string",
            TaskKind::MissingDuplicate => "missing_duplicate",
            TaskKind::OddsFirst => "odds_first",
        }
    }

    pub fn level(self) -> Level {
        use TaskKind::*;
        match self {
            EvenPairs | ParityCheck | CycleNavigation => Level::Regular,
            StackManipulation | ReverseString | ModularArithmetic | SolveEquation => {
                Level::DeterministicContextFree
            }
            _ => Level::ContextSensitive,
        }
    }

    pub fn input_alphabet(self) -> &'static [Symbol] {
        use TaskKind::*;
        match self {
            EvenPairs | ParityCheck | ReverseString | DuplicateString | OddsFirst => AB,
            CycleNavigation => &["0", "1", "2"],
            StackManipulation => &["a", "b", "POP", "PUSH"],
            ModularArithmetic => &["0", "1", "2", "3", "4", "+", "-", "*", "(", ")"],
            SolveEquation => &["0", "1", "2", "3", "4", "+", "-", "*", "(", ")", "z", "="],
            BinaryAddition => &["0", "1", "+"],
            BinaryMultiplication => &["0", "1", "*"],
            ComputeSqrt => BINARY,
            BucketSort => DIGITS,
            MissingDuplicate => &["a", "b", "_"],
        }
    }

    pub fn output_alphabet(self) -> &'static [Symbol] {
        use TaskKind::*;
        match self {
            EvenPairs | ParityCheck => BOOL,
            CycleNavigation | ModularArithmetic | SolveEquation | BucketSort => DIGITS,
            StackManipulation => &["a", "b", "EMPTY"],
            ReverseString | DuplicateString | OddsFirst | MissingDuplicate => AB,
            BinaryAddition | BinaryMultiplication | ComputeSqrt => BINARY,
        }
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec {
            kind: self,
            name: self.name(),
            level: self.level(),
            input_alphabet: self.input_alphabet(),
            output_alphabet: self.output_alphabet(),
        }
    }

    pub fn min_length(self) -> usize {
        use TaskKind::*;
        match self {
            BinaryAddition | BinaryMultiplication | SolveEquation => 3,
            MissingDuplicate => 2,
            _ => 1,
        }
    }

    pub fn supports_length(self, n: usize) -> bool {
        n >= self.min_length() && (self != TaskKind::MissingDuplicate || n.is_multiple_of(2))
    }

    /// Uniform random input of exactly `length` tokens plus its answer.
    pub fn generate<R: Rng + ?Sized>(self, length: usize, rng: &mut R) -> Result<Sample> {
        if !self.supports_length(length) {
            return Err(Error::UnsupportedLength {
                task: self.name(),
                length,
            });
        }
        let input = match self {
            TaskKind::SolveEquation => return self.generate_equation(length, rng),
            _ => self.generate_input(length, rng),
        };
        debug_assert_eq!(input.len(), length);
        let target = self.answer(&input)?;
        Ok(Sample {
            task: self,
            input,
            target,
            length,
        })
    }

    fn generate_input<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Vec<Symbol> {
        use TaskKind::*;
        let uniform = |alphabet: &[Symbol], n: usize, rng: &mut R| -> Vec<Symbol> {
            (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        match self {
            EvenPairs | ParityCheck | ReverseString | DuplicateString | OddsFirst => uniform(AB, n, rng),
            CycleNavigation => uniform(&["0", "1", "2"], n, rng),
            BucketSort => uniform(DIGITS, n, rng),
            ComputeSqrt => uniform(BINARY, n, rng),
            BinaryAddition | BinaryMultiplication => {
                let k = rng.random_range(1..=n - 2);
                let mut v = uniform(BINARY, k, rng);
                v.push(if self == BinaryAddition { "+" } else { "*" });
                v.extend(uniform(BINARY, n - 1 - k, rng));
                v
            }
            MissingDuplicate => {
                let half = uniform(AB, n / 2, rng);
                let mut v = half.clone();
                v.extend(half);
                v[rng.random_range(0..n)] = "_";
                v
            }
            StackManipulation => {
                let k = rng.random_range(1..=n);
                let mut v = uniform(AB, k, rng);
                while v.len() < n {
                    if n - v.len() >= 2 && rng.random_bool(0.5) {
                        v.push("PUSH");
                        v.push(AB[rng.random_range(0..2)]);
                    } else {
                        v.push("POP");
                    }
                }
                v
            }
            ModularArithmetic => {
                let mut v = Vec::with_capacity(n);
                expr::gen_expr(n, rng, &mut v);
                v
            }
            SolveEquation => unreachable!("handled by generate_equation"),
        }
    }

    /// Expression with a single `z` leaf, `=`, and its value; resampled
    /// until exactly one `z` in 0..5 satisfies it.
    fn generate_equation<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Result<Sample> {
        for _ in 0..10_000 {
            let mut e = Vec::with_capacity(n);
            expr::gen_expr(n - 2, rng, &mut e);
            let leaves: Vec<usize> = (0..e.len()).filter(|&i| DIGITS.contains(&e[i])).collect();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            e[leaf] = "z";
            let z = rng.random_range(0..expr::MODULUS);
            let value = expr::eval(&e, Some(z)).expect("generated expressions parse");
            e.push("=");
            e.push(DIGITS[value as usize]);
            if let Ok(target) = self.answer(&e) {
                debug_assert_eq!(target, vec![DIGITS[z as usize]]);
                return Ok(Sample {
                    task: self,
                    input: e,
                    target,
                    length: n,
                });
            }
        }
        Err(Error::UnsupportedLength {
            task: self.name(),
            length: n,
        })
    }

    /// Ground-truth output for an input string.
    pub fn answer(self, input: &[Symbol]) -> Result<Vec<Symbol>> {
        use TaskKind::*;
        if input.is_empty() {
            return Err(Error::Empty("task input"));
        }
        let alphabet = self.input_alphabet();
        if let Some(bad) = input.iter().find(|s| !alphabet.contains(s)) {
            return Err(Error::UnknownSymbol(bad.to_string()));
        }
        let malformed = || Error::InvalidConfig(format!("malformed {} input: {}", self.name(), input.join(" ")));
        let truth = |b: bool| vec![if b { "True" } else { "False" }];
        Ok(match self {
            EvenPairs => {
                let pairs = input.windows(2).filter(|w| w[0] != w[1]).count();
                truth(pairs % 2 == 0)
            }
            ParityCheck => truth(input.iter().filter(|s| **s == "b").count() % 2 == 0),
            CycleNavigation => {
                let pos = input.iter().fold(0i64, |p, s| match *s {
                    "1" => p + 1,
                    "2" => p - 1,
                    _ => p,
                });
                vec![DIGITS[pos.rem_euclid(5) as usize]]
            }
            StackManipulation => {
                let split = input.iter().position(|s| *s == "POP" || *s == "PUSH").unwrap_or(input.len());
                let mut stack: Vec<Symbol> = input[..split].to_vec();
                let mut i = split;
                while i < input.len() {
                    match input[i] {
                        "POP" => {
                            stack.pop();
                            i += 1;
                        }
                        "PUSH" => {
                            let x = *input.get(i + 1).filter(|s| AB.contains(s)).ok_or_else(malformed)?;
                            stack.push(x);
                            i += 2;
                        }
                        _ => return Err(malformed()),
                    }
                }
                if stack.is_empty() {
                    vec!["EMPTY"]
                } else {
                    stack
                }
            }
            ReverseString => input.iter().rev().copied().collect(),
            ModularArithmetic => {
                let v = expr::eval(input, None).ok_or_else(malformed)?;
                vec![DIGITS[v as usize]]
            }
            SolveEquation => {
                let eq = input.iter().position(|s| *s == "=").ok_or_else(malformed)?;
                if eq + 2 != input.len() || input[..eq].iter().filter(|s| **s == "z").count() != 1 {
                    return Err(malformed());
                }
                let rhs = DIGITS.iter().position(|d| *d == input[eq + 1]).ok_or_else(malformed)? as i64;
                let mut sols = Vec::new();
                for z in 0..expr::MODULUS {
                    if expr::eval(&input[..eq], Some(z)).ok_or_else(malformed)? == rhs {
                        sols.push(z);
                    }
                }
                match sols[..] {
                    [z] => vec![DIGITS[z as usize]],
                    _ => return Err(malformed()),
                }
            }
            BinaryAddition | BinaryMultiplication => {
                let op = if self == BinaryAddition { "+" } else { "*" };
                let at = input.iter().position(|s| *s == op).ok_or_else(malformed)?;
                let a = bits::parse(&input[..at]).filter(|v| !v.is_empty()).ok_or_else(malformed)?;
                let b = bits::parse(&input[at + 1..]).filter(|v| !v.is_empty()).ok_or_else(malformed)?;
                let r = if self == BinaryAddition {
                    bits::add(&a, &b)
                } else {
                    bits::mul(&a, &b)
                };
                bits::render(&r)
            }
            ComputeSqrt => bits::render(&bits::isqrt(&bits::parse(input).ok_or_else(malformed)?)),
            BucketSort => {
                let mut v = input.to_vec();
                v.sort_by_key(|s| DIGITS.iter().position(|d| d == s));
                v
            }
            DuplicateString => input.iter().chain(input).copied().collect(),
            MissingDuplicate => {
                let n = input.len();
                let gap = input.iter().position(|s| *s == "_").ok_or_else(malformed)?;
                if n % 2 == 1 || input.iter().filter(|s| **s == "_").count() != 1 {
                    return Err(malformed());
                }
                let half = n / 2;
                vec![input[(gap + half) % n]]
            }
            OddsFirst => input.iter().step_by(2).chain(input.iter().skip(1).step_by(2)).copied().collect(),
        })
    }

    /// Per-token accuracy of a uniform random guesser over the output
    /// alphabet.
    pub fn chance_accuracy(self) -> f64 {
        1.0 / self.output_alphabet().len() as f64
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Symbol ↔ id table for one task: the four control tokens followed by
/// the union of the input and output alphabets in declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<Symbol>,
    ids: HashMap<Symbol, u32>,
}

impl Vocabulary {
    pub fn for_task(task: TaskKind) -> Self {
        let mut symbols: Vec<Symbol> = CONTROL.to_vec();
        for s in task.input_alphabet().iter().chain(task.output_alphabet()) {
            if !symbols.contains(s) {
                symbols.push(s);
            }
        }
        let ids = symbols.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
        Self { symbols, ids }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, s: &str) -> Result<u32> {
        self.ids.get(s).copied().ok_or_else(|| Error::UnknownSymbol(s.to_string()))
    }

    pub fn symbol(&self, id: u32) -> Result<Symbol> {
        self.symbols.get(id as usize).copied().ok_or(Error::TokenOutOfVocab(id as usize))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn encode_symbols(&self, syms: &[Symbol]) -> Result<Vec<u32>> {
        syms.iter().map(|s| self.id(s)).collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<Vec<Symbol>> {
        ids.iter().map(|&i| self.symbol(i)).collect()
    }
}

/// A sample laid out for the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    /// `BOS input SEP target EOS`
    pub tokens: Vec<u32>,
    /// `true` at the target tokens and the final EOS: the tokens the model
    /// is trained to predict (from the logits one position earlier).
    pub loss_mask: Vec<bool>,
    /// Index of SEP in `tokens`.
    pub sep: usize,
}

impl Encoded {
    /// `BOS input SEP`, the decoding prompt.
    pub fn prompt(&self) -> &[u32] {
        &self.tokens[..=self.sep]
    }

    /// Target ids without EOS.
    pub fn target(&self) -> &[u32] {
        &self.tokens[self.sep + 1..self.tokens.len() - 1]
    }
}

pub fn encode(sample: &Sample, vocab: &Vocabulary) -> Result<Encoded> {
    if sample.target.is_empty() {
        return Err(Error::Empty("target"));
    }
    let mut tokens = Vec::with_capacity(sample.input.len() + sample.target.len() + 3);
    tokens.push(BOS_ID);
    tokens.extend(vocab.encode_symbols(&sample.input)?);
    let sep = tokens.len();
    tokens.push(SEP_ID);
    tokens.extend(vocab.encode_symbols(&sample.target)?);
    tokens.push(EOS_ID);
    let loss_mask = (0..tokens.len()).map(|i| i > sep).collect();
    Ok(Encoded {
        tokens,
        loss_mask,
        sep,
    })
}

/// Inverse of [`encode`].
pub fn decode(task: TaskKind, tokens: &[u32], vocab: &Vocabulary) -> Result<Sample> {
    let bad = || Error::InvalidConfig("token sequence is not BOS input SEP target EOS".into());
    if tokens.first() != Some(&BOS_ID) || tokens.last() != Some(&EOS_ID) || tokens.len() < 4 {
        return Err(bad());
    }
    let body = &tokens[1..tokens.len() - 1];
    let sep = body.iter().position(|&t| t == SEP_ID).ok_or_else(bad)?;
    let input = vocab.decode_ids(&body[..sep])?;
    let target = vocab.decode_ids(&body[sep + 1..])?;
    if target.is_empty() {
        return Err(Error::Empty("target"));
    }
    Ok(Sample {
        task,
        length: input.len(),
        input,
        target,
    })
}

/// Fraction of target positions the prediction gets right. Positions
/// past the end of `pred` count as wrong; extra predicted tokens are
/// ignored.
pub fn token_accuracy<S: PartialEq>(pred: &[S], target: &[S]) -> f64 {
    if target.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    let hits = pred.iter().zip(target).filter(|(p, t)| p == t).count();
    hits as f64 / target.len() as f64
}

/// `n` samples with lengths uniform over the supported lengths in
/// `lo..=hi`.
pub fn batch<R: Rng + ?Sized>(task: TaskKind, lo: usize, hi: usize, n: usize, rng: &mut R) -> Result<Vec<Sample>> {
    let lengths: Vec<usize> = (lo..=hi).filter(|&l| task.supports_length(l)).collect();
    if lengths.is_empty() {
        return Err(Error::UnsupportedLength {
            task: task.name(),
            length: lo,
        });
    }
    (0..n)
        .map(|_| task.generate(lengths[rng.random_range(0..lengths.len())], rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn syms(s: &str) -> Vec<Symbol> {
        s.split_whitespace()
            .map(|t| {
                let all: Vec<Symbol> = TaskKind::ALL
                    .iter()
                    .flat_map(|k| k.input_alphabet().iter().chain(k.output_alphabet()))
                    .copied()
                    .collect();
                *all.iter().find(|x| **x == t).unwrap_or_else(|| panic!("{t}"))
            })
            .collect()
    }

    fn chars(s: &str) -> String {
        s.chars().map(|c| format!("{c} ")).collect()
    }

    #[test]
    fn worked_examples() {
        let cases: &[(TaskKind, String, &str)] = &[
            (TaskKind::EvenPairs, chars("aabba"), "True"),
            (TaskKind::ParityCheck, chars("aaabba"), "True"),
            (TaskKind::CycleNavigation, chars("011210"), "2"),
            (TaskKind::StackManipulation, format!("{} POP PUSH a POP", chars("abbaa")), "a b b a"),
            (TaskKind::ReverseString, chars("aabba"), "a b b a a"),
            (TaskKind::ModularArithmetic, "- ( 1 - 2 ) * ( 4 - 3 * ( - 2 ) )".into(), "0"),
            (TaskKind::BinaryAddition, chars("10010+101"), "1 0 1 1 1"),
            (TaskKind::BucketSort, chars("421302214"), "0 1 1 2 2 2 3 4 4"),
            (TaskKind::DuplicateString, chars("abaab"), "a b a a b a b a a b"),
            (TaskKind::MissingDuplicate, chars("ab_aba"), "a"),
            (TaskKind::OddsFirst, chars("aaabaa"), "a a a a b a"),
        ];
        for (task, input, want) in cases {
            assert_eq!(task.answer(&syms(input)).unwrap(), syms(want), "{task}");
        }
    }

    #[test]
    fn arithmetic_tasks_compute_true_values() {
        // 18 * 5 = 90, isqrt(41) = 6
        assert_eq!(TaskKind::BinaryMultiplication.answer(&syms(&chars("10010*101"))).unwrap(), syms("1 0 1 1 0 1 0"));
        assert_eq!(TaskKind::ComputeSqrt.answer(&syms(&chars("101001"))).unwrap(), syms("1 1 0"));
    }

    #[test]
    fn equation_example_has_no_unique_solution() {
        // every z satisfies it since 4 - 3*(-2) = 10 = 0 (mod 5)
        let e = syms("- ( z - 2 ) * ( 4 - 3 * ( - 2 ) ) = 0");
        assert!(TaskKind::SolveEquation.answer(&e).is_err());
        assert_eq!(expr::eval(&e[..e.len() - 2], Some(1)), Some(0));
        assert_eq!(TaskKind::SolveEquation.answer(&syms("z * 2 = 1")).unwrap(), syms("3"));
    }

    #[test]
    fn stack_manipulation_can_empty() {
        assert_eq!(TaskKind::StackManipulation.answer(&syms("a POP POP")).unwrap(), vec!["EMPTY"]);
        assert!(TaskKind::StackManipulation.answer(&syms("a PUSH")).is_err());
    }

    #[test]
    fn generated_samples_have_requested_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for task in TaskKind::ALL {
            for n in 1..50 {
                match task.generate(n, &mut rng) {
                    Ok(s) => {
                        assert!(task.supports_length(n));
                        assert_eq!(s.input.len(), n);
                        assert_eq!(s.length, n);
                        assert!(!s.target.is_empty());
                        assert_eq!(task.answer(&s.input).unwrap(), s.target);
                    }
                    Err(_) => assert!(!task.supports_length(n), "{task} {n}"),
                }
            }
        }
    }

    #[test]
    fn encode_layout_and_round_trip() {
        let task = TaskKind::ReverseString;
        let vocab = Vocabulary::for_task(task);
        let s = Sample {
            task,
            input: vec!["a", "b"],
            target: vec!["b", "a"],
            length: 2,
        };
        let e = encode(&s, &vocab).unwrap();
        let (a, b) = (vocab.id("a").unwrap(), vocab.id("b").unwrap());
        assert_eq!(e.tokens, vec![BOS_ID, a, b, SEP_ID, b, a, EOS_ID]);
        assert_eq!(e.loss_mask, vec![false, false, false, false, true, true, true]);
        assert_eq!(e.prompt(), &[BOS_ID, a, b, SEP_ID]);
        assert_eq!(e.target(), &[b, a]);
        assert_eq!(decode(task, &e.tokens, &vocab).unwrap(), s);
        let empty = Sample {
            target: vec![],
            ..s.clone()
        };
        assert!(encode(&empty, &vocab).is_err());
        let unknown = Sample {
            input: vec!["z"],
            ..s
        };
        assert!(encode(&unknown, &vocab).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(token_accuracy(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(token_accuracy(&[4, 5], &[1, 2]), 0.0);
        let t = syms("1 0 1 1 1");
        let p = syms("1 0 1 0 1");
        assert!((token_accuracy(&p, &t) - 0.8).abs() < 1e-12);
        assert!((token_accuracy(&p[..2], &t) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn batch_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batch(TaskKind::ParityCheck, 1, 40, 128, &mut rng).unwrap();
        assert_eq!(b.len(), 128);
        assert!(b.iter().all(|s| (1..=40).contains(&s.length)));
        let b = batch(TaskKind::ParityCheck, 5, 5, 10, &mut rng).unwrap();
        assert!(b.iter().all(|s| s.length == 5));
        let b = batch(TaskKind::MissingDuplicate, 1, 9, 50, &mut rng).unwrap();
        assert!(b.iter().all(|s| s.length % 2 == 0));
        assert!(batch(TaskKind::BinaryAddition, 1, 2, 1, &mut rng).is_err());
    }

    #[test]
    fn parse_task_names() {
        assert_eq!("parity_check".parse::<TaskKind>().unwrap(), TaskKind::ParityCheck);
        assert_eq!("Reverse String".parse::<TaskKind>().unwrap(), TaskKind::ReverseString);
        assert!("nope".parse::<TaskKind>().is_err());
    }
}
