//! Modular (mod 5) arithmetic expressions over the grammar
//!
//! ```text
//! E := T | E '+' T | E '-' T
//! T := F | T '*' F
//! F := digit | 'z' | '(' E ')' | '-' F
//! ```
//!
//! Expressions are generated with an exact token count.

use rand::Rng;

pub(crate) const MODULUS: i64 = 5;
pub(crate) const DIGITS: [&str; 5] = ["0", "1", "2", "3", "4"];

pub(crate) fn gen_expr<R: Rng + ?Sized>(n: usize, rng: &mut R, out: &mut Vec<&'static str>) {
    debug_assert!(n >= 1);
    if n >= 3 && rng.random_bool(0.5) {
        let k = rng.random_range(1..=n - 2);
        gen_expr(k, rng, out);
        out.push(if rng.random_bool(0.5) { "+" } else { "-" });
        gen_term(n - 1 - k, rng, out);
    } else {
        gen_term(n, rng, out);
    }
}

fn gen_term<R: Rng + ?Sized>(n: usize, rng: &mut R, out: &mut Vec<&'static str>) {
    if n >= 3 && rng.random_bool(0.5) {
        let k = rng.random_range(1..=n - 2);
        gen_term(k, rng, out);
        out.push("*");
        gen_factor(n - 1 - k, rng, out);
    } else {
        gen_factor(n, rng, out);
    }
}

fn gen_factor<R: Rng + ?Sized>(n: usize, rng: &mut R, out: &mut Vec<&'static str>) {
    match n {
        1 => out.push(DIGITS[rng.random_range(0..5)]),
        2 => {
            out.push("-");
            gen_factor(1, rng, out);
        }
        _ if rng.random_bool(0.75) => {
            out.push("(");
            gen_expr(n - 2, rng, out);
            out.push(")");
        }
        _ => {
            out.push("-");
            gen_factor(n - 1, rng, out);
        }
    }
}

/// Recursive-descent evaluator, mod 5. `z` takes the value `z`.
pub(crate) fn eval(tokens: &[&str], z: Option<i64>) -> Option<i64> {
    let mut p = Parser { tokens, pos: 0, z };
    let v = p.expr()?;
    (p.pos == tokens.len()).then_some(v)
}

struct Parser<'a> {
    tokens: &'a [&'a str],
    pos: usize,
    z: Option<i64>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).copied()
    }

    fn expr(&mut self) -> Option<i64> {
        let mut acc = self.term()?;
        while let Some(op @ ("+" | "-")) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == "+" { acc + rhs } else { acc - rhs }.rem_euclid(MODULUS);
        }
        Some(acc)
    }

    fn term(&mut self) -> Option<i64> {
        let mut acc = self.factor()?;
        while self.peek() == Some("*") {
            self.pos += 1;
            acc = (acc * self.factor()?).rem_euclid(MODULUS);
        }
        Some(acc)
    }

    fn factor(&mut self) -> Option<i64> {
        let tok = self.peek()?;
        self.pos += 1;
        match tok {
            "-" => Some((-self.factor()?).rem_euclid(MODULUS)),
            "(" => {
                let v = self.expr()?;
                (self.peek() == Some(")")).then(|| {
                    self.pos += 1;
                    v
                })
            }
            "z" => self.z,
            d => DIGITS.iter().position(|x| *x == d).map(|v| v as i64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn evaluates_worked_example() {
        assert_eq!(eval(&toks("- ( 1 - 2 ) * ( 4 - 3 * ( - 2 ) )"), None), Some(0));
        assert_eq!(eval(&toks("2 * 3 + 4"), None), Some(0));
        assert_eq!(eval(&toks("- - 3"), None), Some(3));
        assert_eq!(eval(&toks("( 1 +"), None), None);
        assert_eq!(eval(&toks("1 2"), None), None);
        assert_eq!(eval(&toks("z * 2"), Some(4)), Some(3));
    }

    #[test]
    fn generated_lengths_are_exact_and_parse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..60 {
            for _ in 0..20 {
                let mut out = Vec::new();
                gen_expr(n, &mut rng, &mut out);
                assert_eq!(out.len(), n);
                assert!(eval(&out, None).is_some(), "{out:?}");
            }
        }
    }
}
