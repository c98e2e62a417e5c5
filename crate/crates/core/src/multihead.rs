//! Multi-head low-rank stack module.
//!
//! A hidden vector of width `d` is projected down to `H·d_s`, split into
//! `H` chunks that each drive an independent [`stack`](crate::stack) head,
//! and the concatenated read-outs are projected back up and added to a
//! gated copy of the input: `h' = g·h + W_up · concat(r_1..r_H)`.
//!
//! Projection matrices are stored input-major (`W_down` is `d × H·d_s`,
//! `W_up` is `H·d_s × d`) so that row vectors multiply from the left.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::linalg::{matmul, Op, Real};
use crate::stack::{
    step_backward, step_traced, ActionDistribution, StackModes, StackParams, StackState, StepTrace,
};

/// Largest `H·d_s` accepted by [`init_params`].
pub const MAX_STACK_WIDTH: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadStackParams<T> {
    d_model: usize,
    n_heads: usize,
    head_width: usize,
    slots: usize,
    pub w_down: Vec<T>,
    pub w_up: Vec<T>,
    pub gate: T,
    pub heads: Vec<StackParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadStackState<T> {
    pub per_head: Vec<StackState<T>>,
}

impl<T: Real> MultiHeadStackState<T> {
    pub fn empty(n_heads: usize, slots: usize, head_width: usize) -> Result<Self> {
        let per_head = (0..n_heads)
            .map(|_| StackState::empty(slots, head_width))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_head })
    }

    pub fn for_params(params: &MultiHeadStackParams<T>) -> Self {
        Self::empty(params.n_heads, params.slots, params.head_width)
            .expect("params were validated at construction")
    }
}

impl<T: Real> MultiHeadStackParams<T> {
    pub fn new(
        d_model: usize,
        w_down: Vec<T>,
        w_up: Vec<T>,
        gate: T,
        heads: Vec<StackParams<T>>,
    ) -> Result<Self> {
        let n_heads = heads.len();
        if n_heads == 0 || d_model == 0 {
            return Err(Error::InvalidDimension("need d >= 1 and at least one stack head".into()));
        }
        let head_width = heads[0].width();
        let slots = heads[0].slots();
        if heads.iter().any(|h| h.width() != head_width || h.slots() != slots) {
            return Err(Error::InvalidDimension("all stack heads must share S and d_s".into()));
        }
        let total = n_heads * head_width;
        check_len("W_down", d_model * total, w_down.len())?;
        check_len("W_up", total * d_model, w_up.len())?;
        Ok(Self {
            d_model,
            n_heads,
            head_width,
            slots,
            w_down,
            w_up,
            gate,
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn head_width(&self) -> usize {
        self.head_width
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// `H·d_s`
    pub fn stack_width(&self) -> usize {
        self.n_heads * self.head_width
    }

    pub fn modes(&self) -> StackModes {
        self.heads[0].modes
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_down: vec![T::zero(); self.w_down.len()],
            w_up: vec![T::zero(); self.w_up.len()],
            gate: T::zero(),
            heads: self.heads.iter().map(StackParams::zeros_like).collect(),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_down.len() + self.w_up.len() + 1 + self.heads.iter().map(|h| h.param_count()).sum::<usize>()
    }

    /// Visit every parameter tensor as `(name, slice)`.
    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&format!("{prefix}w_down"), &mut self.w_down);
        f(&format!("{prefix}w_up"), &mut self.w_up);
        f(&format!("{prefix}gate"), std::slice::from_mut(&mut self.gate));
        for (i, h) in self.heads.iter_mut().enumerate() {
            f(&format!("{prefix}heads.{i}.action"), &mut h.action);
            f(&format!("{prefix}heads.{i}.read_query"), &mut h.read_query);
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&format!("{prefix}w_down"), &self.w_down);
        f(&format!("{prefix}w_up"), &self.w_up);
        f(&format!("{prefix}gate"), std::slice::from_ref(&self.gate));
        for (i, h) in self.heads.iter().enumerate() {
            f(&format!("{prefix}heads.{i}.action"), &h.action);
            f(&format!("{prefix}heads.{i}.read_query"), &h.read_query);
        }
    }

    /// `Z = X · W_down` for `n` row vectors.
    pub fn project_down(&self, x: &[T], n: usize) -> Vec<T> {
        let k = self.stack_width();
        let mut z = vec![T::zero(); n * k];
        matmul(x, Op::N, &self.w_down, Op::N, &mut z, n, self.d_model, k, false);
        z
    }

    /// `g·X + R · W_up` for `n` row vectors.
    pub fn combine(&self, x: &[T], reads: &[T], n: usize) -> Vec<T> {
        let mut out: Vec<T> = x.iter().map(|&v| self.gate * v).collect();
        matmul(reads, Op::N, &self.w_up, Op::N, &mut out, n, self.stack_width(), self.d_model, true);
        out
    }

    /// Backward of [`combine`](Self::combine). Returns dL/dR and adds the
    /// gated-skip contribution to `d_x`.
    pub fn combine_backward(
        &self,
        x: &[T],
        reads: &[T],
        d_out: &[T],
        n: usize,
        d_x: &mut [T],
        grads: &mut Self,
    ) -> Vec<T> {
        let k = self.stack_width();
        let d = self.d_model;
        matmul(reads, Op::T, d_out, Op::N, &mut grads.w_up, k, n, d, true);
        grads.gate += x.iter().zip(d_out).map(|(&a, &b)| a * b).sum::<T>();
        for (dx, &g) in d_x.iter_mut().zip(d_out) {
            *dx += self.gate * g;
        }
        let mut d_reads = vec![T::zero(); n * k];
        matmul(d_out, Op::N, &self.w_up, Op::T, &mut d_reads, n, d, k, false);
        d_reads
    }

    /// Backward of [`project_down`](Self::project_down); adds into `d_x`.
    pub fn project_down_backward(&self, x: &[T], d_z: &[T], n: usize, d_x: &mut [T], grads: &mut Self) {
        let k = self.stack_width();
        let d = self.d_model;
        matmul(x, Op::T, d_z, Op::N, &mut grads.w_down, d, n, k, true);
        matmul(d_z, Op::N, &self.w_down, Op::T, d_x, n, k, d, true);
    }
}

/// Down-project `h` and cut it into `H` contiguous chunks of `d_s`.
pub fn split_heads<T: Real>(h: &[T], params: &MultiHeadStackParams<T>) -> Result<Vec<Vec<T>>> {
    check_len("hidden vector", params.d_model, h.len())?;
    let z = params.project_down(h, 1);
    Ok(z.chunks(params.head_width).map(<[T]>::to_vec).collect())
}

#[derive(Clone, Debug)]
pub struct MhStepOutput<T> {
    pub state: MultiHeadStackState<T>,
    pub hidden: Vec<T>,
    pub actions: Vec<ActionDistribution<T>>,
}

/// One step of every head on its chunk, followed by the gated residual.
pub fn mh_step<T: Real>(
    state: &MultiHeadStackState<T>,
    h: &[T],
    params: &MultiHeadStackParams<T>,
) -> Result<MhStepOutput<T>> {
    Ok(mh_step_traced(state, h, params)?.0)
}

#[derive(Clone, Debug)]
pub struct MhStepTrace<T> {
    h: Vec<T>,
    reads: Vec<T>,
    heads: Vec<StepTrace<T>>,
}

pub fn mh_step_traced<T: Real>(
    state: &MultiHeadStackState<T>,
    h: &[T],
    params: &MultiHeadStackParams<T>,
) -> Result<(MhStepOutput<T>, MhStepTrace<T>)> {
    check_len("stack heads", params.n_heads, state.per_head.len())?;
    let chunks = split_heads(h, params)?;
    let mut next = Vec::with_capacity(params.n_heads);
    let mut reads = Vec::with_capacity(params.stack_width());
    let mut actions = Vec::with_capacity(params.n_heads);
    let mut traces = Vec::with_capacity(params.n_heads);
    for ((st, chunk), hp) in state.per_head.iter().zip(&chunks).zip(&params.heads) {
        let (out, trace) = step_traced(st, chunk, hp)?;
        reads.extend_from_slice(&out.read);
        actions.push(out.action);
        next.push(out.state);
        traces.push(trace);
    }
    let hidden = params.combine(h, &reads, 1);
    Ok((
        MhStepOutput {
            state: MultiHeadStackState { per_head: next },
            hidden,
            actions,
        },
        MhStepTrace {
            h: h.to_vec(),
            reads,
            heads: traces,
        },
    ))
}

pub struct MhStepGrads<T> {
    pub d_state: MultiHeadStackState<T>,
    pub d_h: Vec<T>,
}

/// Reverse-mode derivative of [`mh_step_traced`]; parameter gradients are
/// accumulated into `grads`.
pub fn mh_step_backward<T: Real>(
    trace: &MhStepTrace<T>,
    params: &MultiHeadStackParams<T>,
    d_post: Option<&MultiHeadStackState<T>>,
    d_hidden: &[T],
    d_actions: &[[T; 3]],
    grads: &mut MultiHeadStackParams<T>,
) -> MhStepGrads<T> {
    let mut d_h = vec![T::zero(); params.d_model];
    let d_reads = params.combine_backward(&trace.h, &trace.reads, d_hidden, 1, &mut d_h, grads);
    let ds = params.head_width;
    let mut d_z = vec![T::zero(); params.stack_width()];
    let mut d_state = Vec::with_capacity(params.n_heads);
    for (i, (tr, hp)) in trace.heads.iter().zip(&params.heads).enumerate() {
        let g = step_backward(
            tr,
            hp,
            d_post.map(|d| &d.per_head[i]),
            &d_reads[i * ds..(i + 1) * ds],
            d_actions.get(i).copied().unwrap_or([T::zero(); 3]),
            &mut grads.heads[i],
        );
        d_z[i * ds..(i + 1) * ds].copy_from_slice(&g.d_h);
        d_state.push(g.d_state);
    }
    params.project_down_backward(&trace.h, &d_z, 1, &mut d_h, grads);
    MhStepGrads {
        d_state: MultiHeadStackState { per_head: d_state },
        d_h,
    }
}

/// Random down-projection, action matrices and read queries; zero
/// up-projection and unit gate, so the module starts as the identity.
pub fn init_params<T: Real, R: Rng + ?Sized>(
    d_model: usize,
    n_heads: usize,
    head_width: usize,
    slots: usize,
    modes: StackModes,
    rng: &mut R,
) -> Result<MultiHeadStackParams<T>> {
    if d_model == 0 || n_heads == 0 || head_width == 0 || slots == 0 {
        return Err(Error::InvalidDimension(format!(
            "d={d_model}, H={n_heads}, d_s={head_width}, S={slots} must all be positive"
        )));
    }
    let total = n_heads * head_width;
    if total > MAX_STACK_WIDTH {
        return Err(Error::InvalidDimension(format!("H·d_s = {total} exceeds {MAX_STACK_WIDTH}")));
    }
    let w_down = normal_vec(d_model * total, (d_model as f64).powf(-0.5), rng);
    let heads = (0..n_heads)
        .map(|_| {
            let q = StackParams::<T>::query_len(head_width, slots, modes.read);
            let std = (head_width as f64).powf(-0.5);
            StackParams::new(
                head_width,
                slots,
                normal_vec(3 * head_width, std, rng),
                normal_vec(q, std, rng),
                modes,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiHeadStackParams::new(d_model, w_down, vec![T::zero(); total * d_model], T::one(), heads)
}

pub(crate) fn normal_vec<T: Real, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::of(dist.sample(rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::ReadMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        m
    }

    fn manual(d: usize, h: usize, ds: usize, s: usize, modes: StackModes) -> MultiHeadStackParams<f64> {
        let heads = (0..h).map(|_| StackParams::zeros(ds, s, modes).unwrap()).collect();
        MultiHeadStackParams::new(d, vec![0.0; d * h * ds], vec![0.0; h * ds * d], 1.0, heads).unwrap()
    }

    #[test]
    fn split_heads_identity_projection() {
        let mut p = manual(2, 2, 1, 3, StackModes::default());
        p.w_down = identity(2);
        assert_eq!(split_heads(&[3.0, 7.0], &p).unwrap(), vec![vec![3.0], vec![7.0]]);
        let mut p = manual(2, 1, 2, 3, StackModes::default());
        p.w_down = identity(2);
        assert_eq!(split_heads(&[3.0, 7.0], &p).unwrap(), vec![vec![3.0, 7.0]]);
        assert!(split_heads(&[1.0], &p).is_err());
    }

    #[test]
    fn split_heads_reference_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_params::<f32, _>(960, 4, 16, 24, StackModes::default(), &mut rng).unwrap();
        let h = vec![0.5f32; 960];
        let chunks = split_heads(&h, &p).unwrap();
        assert_eq!(chunks.len(), 4);
        assert!(chunks.iter().all(|c| c.len() == 16));
    }

    #[test]
    fn zero_up_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params::<f64, _>(6, 2, 2, 4, StackModes::default(), &mut rng).unwrap();
        let mut st = MultiHeadStackState::for_params(&p);
        for t in 0..5 {
            let h: Vec<f64> = (0..6).map(|i| (i as f64 + t as f64).sin() * 3.0).collect();
            let out = mh_step(&st, &h, &p).unwrap();
            assert_eq!(out.hidden, h);
            st = out.state;
        }
    }

    #[test]
    fn closed_gate_returns_read_out() {
        let modes = StackModes {
            read: ReadMode::TopPeek,
            ..Default::default()
        };
        let mut p = manual(3, 1, 3, 2, modes);
        p.w_down = identity(3);
        p.w_up = identity(3);
        p.gate = 0.0;
        let st = MultiHeadStackState::for_params(&p);
        let out = mh_step(&st, &[1.0, 2.0, 3.0], &p).unwrap();
        // symmetric logits: push weight 1/3 lands on the top slot
        for (x, h) in out.hidden.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - h / 3.0).abs() < 1e-12);
        }
        let heads = split_heads(&[1.0, 2.0, 3.0], &p).unwrap();
        let direct = crate::stack::step(&st.per_head[0], &heads[0], &p.heads[0]).unwrap();
        assert_eq!(out.hidden, direct.read);
    }

    #[test]
    fn symmetric_heads_report_uniform_actions() {
        let p = manual(4, 2, 2, 3, StackModes::default());
        let out = mh_step(&MultiHeadStackState::for_params(&p), &[1.0, -1.0, 2.0, 0.5], &p).unwrap();
        assert_eq!(out.actions.len(), 2);
        for a in &out.actions {
            for x in a.as_array() {
                assert!((x - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params::<f32, _>(64, 4, 8, 24, StackModes::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = init_params::<f32, _>(64, 4, 8, 24, StackModes::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.w_up.iter().all(|&x| x == 0.0));
        assert_eq!(a.gate, 1.0);
        let full = init_params::<f32, _>(64, 1, 64, 24, StackModes::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(full.w_down.len(), 64 * 64);
        assert_eq!(full.w_up.len(), 64 * 64);
        assert!(full.param_count() > a.param_count());
        assert!(init_params::<f32, _>(64, 0, 8, 24, StackModes::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
