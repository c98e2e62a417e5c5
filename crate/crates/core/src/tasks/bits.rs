//! Unbounded binary naturals as most-significant-first digit strings.
//!
//! Only what the binary tasks need: add, multiply, integer square root.

/// Parse `"1"`/`"0"` symbols into little-endian bits.
pub(crate) fn parse(msb_first: &[&str]) -> Option<Vec<u8>> {
    msb_first
        .iter()
        .rev()
        .map(|s| match *s {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        })
        .collect()
}

/// Little-endian bits to canonical MSB-first symbols (`"0"` for zero).
pub(crate) fn render(le: &[u8]) -> Vec<&'static str> {
    let mut v = le.to_vec();
    trim(&mut v);
    if v.is_empty() {
        return vec!["0"];
    }
    v.iter().rev().map(|&b| if b == 1 { "1" } else { "0" }).collect()
}

fn trim(v: &mut Vec<u8>) {
    while v.last() == Some(&0) {
        v.pop();
    }
}

pub(crate) fn add(a: &[u8], b: &[u8]) -> Vec<u8> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n + 1);
    let mut carry = 0;
    for i in 0..n {
        let s = a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0) + carry;
        out.push(s & 1);
        carry = s >> 1;
    }
    if carry == 1 {
        out.push(1);
    }
    trim(&mut out);
    out
}

pub(crate) fn mul(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut acc = Vec::new();
    for (shift, &bit) in b.iter().enumerate() {
        if bit == 1 {
            let mut shifted = vec![0; shift];
            shifted.extend_from_slice(a);
            acc = add(&acc, &shifted);
        }
    }
    trim(&mut acc);
    acc
}

fn cmp(a: &[u8], b: &[u8]) -> std::cmp::Ordering {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    trim(&mut a);
    trim(&mut b);
    a.len().cmp(&b.len()).then_with(|| a.iter().rev().cmp(b.iter().rev()))
}

/// `a - b`, requires `a >= b`.
fn sub(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len());
    let mut borrow = 0i8;
    for i in 0..a.len() {
        let mut d = a[i] as i8 - b.get(i).copied().unwrap_or(0) as i8 - borrow;
        borrow = 0;
        if d < 0 {
            d += 2;
            borrow = 1;
        }
        out.push(d as u8);
    }
    debug_assert_eq!(borrow, 0);
    trim(&mut out);
    out
}

/// Floor square root by the digit-by-digit (restoring) method, two bits
/// of input per bit of output.
pub(crate) fn isqrt(a: &[u8]) -> Vec<u8> {
    let mut a = a.to_vec();
    trim(&mut a);
    if a.len() % 2 == 1 {
        a.push(0);
    }
    let mut rem: Vec<u8> = Vec::new();
    let mut root: Vec<u8> = Vec::new();
    for pair in (0..a.len() / 2).rev() {
        // rem = rem * 4 + next two bits
        let mut shifted = vec![a[2 * pair], a[2 * pair + 1]];
        shifted.extend_from_slice(&rem);
        rem = shifted;
        // candidate = root * 4 + 1
        let mut cand = vec![1, 0];
        cand.extend_from_slice(&root);
        root.insert(0, 0);
        if cmp(&rem, &cand) != std::cmp::Ordering::Less {
            rem = sub(&rem, &cand);
            root[0] = 1;
        }
    }
    trim(&mut root);
    root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(x: u64) -> Vec<u8> {
        let mut v = Vec::new();
        let mut x = x;
        while x > 0 {
            v.push((x & 1) as u8);
            x >>= 1;
        }
        v
    }

    fn val(v: &[u8]) -> u64 {
        v.iter().rev().fold(0, |acc, &b| acc * 2 + b as u64)
    }

    #[test]
    fn small_numbers_exhaustive() {
        for a in 0..64u64 {
            assert_eq!(val(&isqrt(&num(a))), (a as f64).sqrt().floor() as u64, "sqrt {a}");
            for b in 0..64u64 {
                assert_eq!(val(&add(&num(a), &num(b))), a + b);
                assert_eq!(val(&mul(&num(a), &num(b))), a * b);
            }
        }
    }

    #[test]
    fn render_is_canonical() {
        assert_eq!(render(&[]), vec!["0"]);
        assert_eq!(render(&[1, 0, 1, 0, 0]), vec!["1", "0", "1"]);
        assert_eq!(parse(&["1", "0", "0"]), Some(vec![0, 0, 1]));
        assert_eq!(parse(&["1", "x"]), None);
    }
}
