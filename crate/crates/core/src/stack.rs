//! Single-head differentiable stack.
//!
//! A stack holds `S` slots of width `w` (slot 0 is the top) and an
//! `S`-length activation mask. Each step turns a hidden vector into a
//! distribution over push / pop / no-op and writes the probability-weighted
//! mixture of the three discrete results. Slot `S` and beyond are
//! implicitly the zero vector, so a push onto a full stack forgets the
//! bottom element.
//!
//! Besides the forward functions, this module exposes a traced step and
//! its reverse-mode derivative, which the multi-head wrapper and the
//! backbone chain together.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, dot, softmax, softmax_backward, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    #[default]
    Stack,
    /// First-in-first-out variant. Pop and no-op match the stack; push
    /// writes into the first inactive slot, located softly through the mask.
    Queue,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Free,
    /// Action is pinned to (1, 0, 0); the action matrix is ignored.
    PushOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadMode {
    /// Attention over slots with logits `mask[i] * (values[i] . query)`,
    /// query of length `w`.
    #[default]
    GlobalContent,
    /// Attention over slots with logits `mask[i] * query[i]`, query of
    /// length `S`.
    GlobalPosition,
    /// Return the top slot.
    TopPeek,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StackModes {
    #[serde(default)]
    pub structure: StructureMode,
    #[serde(default)]
    pub action: ActionMode,
    #[serde(default)]
    pub read: ReadMode,
}

/// Soft stack contents: `values` is `S×w` row-major, `mask` has length `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackState<T> {
    slots: usize,
    width: usize,
    values: Vec<T>,
    mask: Vec<T>,
}

impl<T: Real> StackState<T> {
    pub fn empty(slots: usize, width: usize) -> Result<Self> {
        if slots == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!(
                "stack needs at least one slot of width >= 1 (got S={slots}, w={width})"
            )));
        }
        Ok(Self {
            slots,
            width,
            values: vec![T::zero(); slots * width],
            mask: vec![T::zero(); slots],
        })
    }

    pub fn from_parts(slots: usize, width: usize, values: Vec<T>, mask: Vec<T>) -> Result<Self> {
        if slots == 0 || width == 0 {
            return Err(Error::InvalidDimension(format!("S={slots}, w={width}")));
        }
        check_len("stack values", slots * width, values.len())?;
        check_len("stack mask", slots, mask.len())?;
        Ok(Self {
            slots,
            width,
            values,
            mask,
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mask(&self) -> &[T] {
        &self.mask
    }

    pub fn slot(&self, i: usize) -> &[T] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    fn slot_or_zero(&self, i: usize) -> Option<&[T]> {
        (i < self.slots).then(|| self.slot(i))
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            slots: self.slots,
            width: self.width,
            values: vec![T::zero(); self.values.len()],
            mask: vec![T::zero(); self.mask.len()],
        }
    }

    pub fn cast<U: Real>(&self) -> StackState<U> {
        StackState {
            slots: self.slots,
            width: self.width,
            values: self.values.iter().map(|x| U::of(x.f64())).collect(),
            mask: self.mask.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// Probabilities of push, pop and no-op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionDistribution<T> {
    pub push: T,
    pub pop: T,
    pub noop: T,
}

impl<T: Real> ActionDistribution<T> {
    pub fn new(push: T, pop: T, noop: T) -> Result<Self> {
        let a = Self { push, pop, noop };
        a.validate()?;
        Ok(a)
    }

    pub fn push() -> Self {
        Self::from_array([T::one(), T::zero(), T::zero()])
    }

    pub fn pop() -> Self {
        Self::from_array([T::zero(), T::one(), T::zero()])
    }

    pub fn noop() -> Self {
        Self::from_array([T::zero(), T::zero(), T::one()])
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self {
            push: a[0],
            pop: a[1],
            noop: a[2],
        }
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.push, self.pop, self.noop]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if !all_finite(&a) {
            return Err(Error::NonFinite("action distribution"));
        }
        let tol = 1e-6;
        let sum: f64 = a.iter().map(|x| x.f64()).sum();
        if a.iter().any(|x| x.f64() < -tol || x.f64() > 1.0 + tol) || (sum - 1.0).abs() > tol {
            return Err(Error::InvalidDimension(format!(
                "not a probability distribution: {:?}",
                a.map(|x| x.f64())
            )));
        }
        Ok(())
    }

    /// Shannon entropy in nats with `0 ln 0 = 0`.
    pub fn entropy(&self) -> T {
        -self
            .as_array()
            .iter()
            .filter(|p| **p > T::zero())
            .map(|&p| p * p.ln())
            .sum::<T>()
    }
}

/// Learned parameters of one stack head plus its behavioural modes.
#[derive(Clone, Debug, PartialEq)]
pub struct StackParams<T> {
    width: usize,
    slots: usize,
    /// `3×w`, rows ordered push, pop, no-op.
    pub action: Vec<T>,
    /// Length `w` for content/peek reads, `S` for position reads.
    pub read_query: Vec<T>,
    pub modes: StackModes,
}

impl<T: Real> StackParams<T> {
    pub fn new(
        width: usize,
        slots: usize,
        action: Vec<T>,
        read_query: Vec<T>,
        modes: StackModes,
    ) -> Result<Self> {
        if width == 0 || slots == 0 {
            return Err(Error::InvalidDimension(format!("S={slots}, w={width}")));
        }
        check_len("action matrix", 3 * width, action.len())?;
        check_len("read query", Self::query_len(width, slots, modes.read), read_query.len())?;
        if !all_finite(&action) || !all_finite(&read_query) {
            return Err(Error::NonFinite("stack params"));
        }
        Ok(Self {
            width,
            slots,
            action,
            read_query,
            modes,
        })
    }

    pub fn zeros(width: usize, slots: usize, modes: StackModes) -> Result<Self> {
        let q = Self::query_len(width, slots, modes.read);
        Self::new(width, slots, vec![T::zero(); 3 * width], vec![T::zero(); q], modes)
    }

    pub fn query_len(width: usize, slots: usize, read: ReadMode) -> usize {
        match read {
            ReadMode::GlobalPosition => slots,
            ReadMode::GlobalContent | ReadMode::TopPeek => width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            width: self.width,
            slots: self.slots,
            action: vec![T::zero(); self.action.len()],
            read_query: vec![T::zero(); self.read_query.len()],
            modes: self.modes,
        }
    }

    pub fn param_count(&self) -> usize {
        self.action.len() + self.read_query.len()
    }
}

fn check_state<T: Real>(state: &StackState<T>, params: &StackParams<T>) -> Result<()> {
    check_len("stack width", params.width, state.width)?;
    check_len("stack slots", params.slots, state.slots)
}

/// Action logits `A h`.
fn action_logits<T: Real>(h: &[T], action: &[T], width: usize) -> [T; 3] {
    let mut logits = [T::zero(); 3];
    for (k, l) in logits.iter_mut().enumerate() {
        *l = dot(&action[k * width..(k + 1) * width], h);
    }
    logits
}

pub fn compute_actions<T: Real>(h: &[T], params: &StackParams<T>) -> Result<ActionDistribution<T>> {
    check_len("hidden vector", params.width, h.len())?;
    if !all_finite(h) {
        return Err(Error::NonFinite("hidden vector"));
    }
    Ok(match params.modes.action {
        ActionMode::PushOnly => ActionDistribution::push(),
        ActionMode::Free => {
            let p = softmax(&action_logits(h, &params.action, params.width));
            ActionDistribution::from_array([p[0], p[1], p[2]])
        }
    })
}

/// Soft queue write position: `f_0 = 1 - m_0`, `f_i = m_{i-1}(1 - m_i)`,
/// divided by `max(Σf, 1)` so the weights never sum past one and a full
/// queue (all weights zero) discards the push. Returns the scaled weights
/// and the raw sum.
fn queue_frontier<T: Real>(mask: &[T]) -> (Vec<T>, T) {
    let mut f: Vec<T> = (0..mask.len())
        .map(|i| {
            if i == 0 {
                T::one() - mask[0]
            } else {
                mask[i - 1] * (T::one() - mask[i])
            }
        })
        .collect();
    let total: T = f.iter().copied().sum();
    let denom = total.max(T::one());
    f.iter_mut().for_each(|x| *x /= denom);
    (f, total)
}

fn update_inner<T: Real>(
    state: &StackState<T>,
    h: &[T],
    a: &ActionDistribution<T>,
    structure: StructureMode,
) -> (StackState<T>, Vec<T>, T) {
    let (s, w) = (state.slots, state.width);
    let mut next = state.zeros_like();
    let [push, pop, noop] = a.as_array();
    let (frontier, ftotal) = match structure {
        StructureMode::Queue => queue_frontier(&state.mask),
        StructureMode::Stack => (Vec::new(), T::zero()),
    };
    for i in 0..s {
        let cur = state.slot(i);
        let below = state.slot_or_zero(i + 1);
        let out = &mut next.values[i * w..(i + 1) * w];
        let (m_push, m_pop) = match structure {
            StructureMode::Stack => {
                let src = if i == 0 { h } else { state.slot(i - 1) };
                for j in 0..w {
                    out[j] = push * src[j] + noop * cur[j];
                }
                let m_src = if i == 0 { T::one() } else { state.mask[i - 1] };
                (m_src, state.mask.get(i + 1).copied().unwrap_or(T::zero()))
            }
            StructureMode::Queue => {
                let f = frontier[i];
                for j in 0..w {
                    out[j] = push * ((T::one() - f) * cur[j] + f * h[j]) + noop * cur[j];
                }
                let m_src = (T::one() - f) * state.mask[i] + f;
                (m_src, state.mask.get(i + 1).copied().unwrap_or(T::zero()))
            }
        };
        if let Some(below) = below {
            for j in 0..w {
                out[j] += pop * below[j];
            }
        }
        next.mask[i] = push * m_push + pop * m_pop + noop * state.mask[i];
    }
    (next, frontier, ftotal)
}

/// Soft push/pop/no-op update. Pure: the input state is not touched.
pub fn update<T: Real>(
    state: &StackState<T>,
    h: &[T],
    a: &ActionDistribution<T>,
    structure: StructureMode,
) -> Result<StackState<T>> {
    check_len("hidden vector", state.width, h.len())?;
    if !all_finite(h) || !all_finite(&state.values) || !all_finite(&state.mask) {
        return Err(Error::NonFinite("stack update input"));
    }
    a.validate()?;
    Ok(update_inner(state, h, a, structure).0)
}

fn read_inner<T: Real>(state: &StackState<T>, params: &StackParams<T>) -> (Vec<T>, Vec<T>) {
    let (s, w) = (state.slots, state.width);
    let logits: Vec<T> = match params.modes.read {
        ReadMode::TopPeek => return (state.slot(0).to_vec(), Vec::new()),
        ReadMode::GlobalContent => (0..s)
            .map(|i| state.mask[i] * dot(state.slot(i), &params.read_query))
            .collect(),
        ReadMode::GlobalPosition => (0..s).map(|i| state.mask[i] * params.read_query[i]).collect(),
    };
    let attn = softmax(&logits);
    let mut out = vec![T::zero(); w];
    for (i, &p) in attn.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(state.slot(i)) {
            *o += p * v;
        }
    }
    (out, attn)
}

/// Read-out of the stack under `params.modes.read`.
pub fn read<T: Real>(state: &StackState<T>, params: &StackParams<T>) -> Result<Vec<T>> {
    check_state(state, params)?;
    Ok(read_inner(state, params).0)
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub state: StackState<T>,
    pub read: Vec<T>,
    pub action: ActionDistribution<T>,
}

/// Actions, update, then read of the updated stack.
pub fn step<T: Real>(state: &StackState<T>, h: &[T], params: &StackParams<T>) -> Result<StepOutput<T>> {
    Ok(step_traced(state, h, params)?.0)
}

/// Everything the backward pass of one step needs.
#[derive(Clone, Debug)]
pub struct StepTrace<T> {
    pre: StackState<T>,
    h: Vec<T>,
    action: ActionDistribution<T>,
    post: StackState<T>,
    attention: Vec<T>,
    frontier: Vec<T>,
    frontier_total: T,
}

impl<T: Real> StepTrace<T> {
    pub fn action(&self) -> &ActionDistribution<T> {
        &self.action
    }

    pub fn post(&self) -> &StackState<T> {
        &self.post
    }
}

pub fn step_traced<T: Real>(
    state: &StackState<T>,
    h: &[T],
    params: &StackParams<T>,
) -> Result<(StepOutput<T>, StepTrace<T>)> {
    check_state(state, params)?;
    let action = compute_actions(h, params)?;
    if !all_finite(&state.values) || !all_finite(&state.mask) {
        return Err(Error::NonFinite("stack state"));
    }
    let (post, frontier, frontier_total) = update_inner(state, h, &action, params.modes.structure);
    let (read, attention) = read_inner(&post, params);
    let trace = StepTrace {
        pre: state.clone(),
        h: h.to_vec(),
        action,
        post: post.clone(),
        attention,
        frontier,
        frontier_total,
    };
    Ok((
        StepOutput {
            state: post,
            read,
            action,
        },
        trace,
    ))
}

/// Gradients flowing out of one step.
pub struct StepGrads<T> {
    pub d_state: StackState<T>,
    pub d_h: Vec<T>,
}

/// Reverse-mode derivative of [`step_traced`].
///
/// `d_post` is dL/d(updated state) coming from later consumers of the
/// state, `d_read` is dL/d(read-out) and `d_action` is any direct
/// dependence of the loss on the action probabilities (the entropy
/// penalty). Parameter gradients are accumulated into `grads`.
pub fn step_backward<T: Real>(
    trace: &StepTrace<T>,
    params: &StackParams<T>,
    d_post: Option<&StackState<T>>,
    d_read: &[T],
    d_action: [T; 3],
    grads: &mut StackParams<T>,
) -> StepGrads<T> {
    let (s, w) = (trace.pre.slots, trace.pre.width);
    let post = &trace.post;
    let pre = &trace.pre;
    let mut dpost = match d_post {
        Some(d) => d.clone(),
        None => post.zeros_like(),
    };

    // read
    match params.modes.read {
        ReadMode::TopPeek => {
            for (d, &g) in dpost.values[..w].iter_mut().zip(d_read) {
                *d += g;
            }
        }
        mode => {
            let attn = &trace.attention;
            let d_attn: Vec<T> = (0..s).map(|i| dot(d_read, post.slot(i))).collect();
            let mut d_logits = vec![T::zero(); s];
            softmax_backward(attn, &d_attn, &mut d_logits);
            for i in 0..s {
                let dv = &mut dpost.values[i * w..(i + 1) * w];
                for (d, &g) in dv.iter_mut().zip(d_read) {
                    *d += attn[i] * g;
                }
                let m = post.mask[i];
                match mode {
                    ReadMode::GlobalContent => {
                        let q = &params.read_query;
                        dpost.mask[i] += d_logits[i] * dot(post.slot(i), q);
                        for j in 0..w {
                            dv[j] += d_logits[i] * m * q[j];
                            grads.read_query[j] += d_logits[i] * m * post.slot(i)[j];
                        }
                    }
                    ReadMode::GlobalPosition => {
                        dpost.mask[i] += d_logits[i] * params.read_query[i];
                        grads.read_query[i] += d_logits[i] * m;
                    }
                    ReadMode::TopPeek => unreachable!(),
                }
            }
        }
    }

    // update
    let [push, pop, noop] = trace.action.as_array();
    let mut da = d_action;
    let mut dpre = pre.zeros_like();
    let mut d_h = vec![T::zero(); w];
    let h = &trace.h;
    let mut d_frontier = vec![T::zero(); if trace.frontier.is_empty() { 0 } else { s }];
    for i in 0..s {
        let g = &dpost.values[i * w..(i + 1) * w];
        let gm = dpost.mask[i];
        let cur = pre.slot(i);

        // no-op
        da[2] += dot(g, cur) + gm * pre.mask[i];
        axpy_slice(noop, g, &mut dpre.values[i * w..(i + 1) * w]);
        dpre.mask[i] += noop * gm;

        // pop
        if i + 1 < s {
            da[1] += dot(g, pre.slot(i + 1)) + gm * pre.mask[i + 1];
            axpy_slice(pop, g, &mut dpre.values[(i + 1) * w..(i + 2) * w]);
            dpre.mask[i + 1] += pop * gm;
        }

        // push
        match params.modes.structure {
            StructureMode::Stack => {
                if i == 0 {
                    da[0] += dot(g, h) + gm;
                    axpy_slice(push, g, &mut d_h);
                } else {
                    da[0] += dot(g, pre.slot(i - 1)) + gm * pre.mask[i - 1];
                    axpy_slice(push, g, &mut dpre.values[(i - 1) * w..i * w]);
                    dpre.mask[i - 1] += push * gm;
                }
            }
            StructureMode::Queue => {
                let f = trace.frontier[i];
                let m = pre.mask[i];
                let mut src_dot = T::zero();
                let mut df = T::zero();
                for j in 0..w {
                    src_dot += g[j] * ((T::one() - f) * cur[j] + f * h[j]);
                    df += g[j] * (h[j] - cur[j]);
                    dpre.values[i * w + j] += push * (T::one() - f) * g[j];
                    d_h[j] += push * f * g[j];
                }
                da[0] += src_dot + gm * ((T::one() - f) * m + f);
                dpre.mask[i] += push * (T::one() - f) * gm;
                d_frontier[i] = push * (df + gm * (T::one() - m));
            }
        }
    }

    if params.modes.structure == StructureMode::Queue {
        let fhat = &trace.frontier;
        let d_raw: Vec<T> = if trace.frontier_total > T::one() {
            let inner = dot(&d_frontier, fhat);
            d_frontier.iter().map(|&g| (g - inner) / trace.frontier_total).collect()
        } else {
            d_frontier
        };
        let m = &pre.mask;
        dpre.mask[0] -= d_raw[0];
        for i in 1..s {
            dpre.mask[i - 1] += d_raw[i] * (T::one() - m[i]);
            dpre.mask[i] -= d_raw[i] * m[i - 1];
        }
    }

    // actions
    if params.modes.action == ActionMode::Free {
        let p = trace.action.as_array();
        let mut dlogits = [T::zero(); 3];
        softmax_backward(&p, &da, &mut dlogits);
        for k in 0..3 {
            let row = &params.action[k * w..(k + 1) * w];
            for j in 0..w {
                grads.action[k * w + j] += dlogits[k] * h[j];
                d_h[j] += dlogits[k] * row[j];
            }
        }
    }

    StepGrads {
        d_state: dpre,
        d_h,
    }
}

fn axpy_slice<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: usize, s: usize, modes: StackModes) -> StackParams<f64> {
        StackParams::zeros(w, s, modes).unwrap()
    }

    fn state(values: &[f64], mask: &[f64], w: usize) -> StackState<f64> {
        StackState::from_parts(mask.len(), w, values.to_vec(), mask.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn empty_states() {
        let s = StackState::<f64>::empty(3, 1).unwrap();
        assert_eq!(s.values(), &[0.0; 3]);
        assert_eq!(s.mask(), &[0.0; 3]);
        let s = StackState::<f32>::empty(24, 16).unwrap();
        assert_eq!(s.values().len(), 24 * 16);
        assert_eq!(s.mask().len(), 24);
        let s = StackState::<f64>::empty(1, 1).unwrap();
        assert_eq!((s.values(), s.mask()), (&[0.0][..], &[0.0][..]));
        assert!(StackState::<f64>::empty(0, 4).is_err());
        assert!(StackState::<f64>::empty(4, 0).is_err());
    }

    #[test]
    fn actions_are_softmax_of_projection() {
        // A = I-ish so that A h = h for w = 3
        let mut p = params(3, 2, StackModes::default());
        p.action = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let a = compute_actions(&[0.0, 0.0, 0.0], &p).unwrap();
        for x in a.as_array() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let a = compute_actions(&[1.0, 0.5, 0.0], &p).unwrap();
        assert!(close(&a.as_array(), &[0.5064, 0.3072, 0.1863], 1e-3));
        p.modes.action = ActionMode::PushOnly;
        let a = compute_actions(&[-7.0, 3.0, 0.1], &p).unwrap();
        assert_eq!(a.as_array(), [1.0, 0.0, 0.0]);
        assert!(compute_actions(&[1.0, 2.0], &p).is_err());
    }

    #[test]
    fn update_worked_examples() {
        let st = state(&[2., 3., 0.], &[1., 1., 0.], 1);
        let push = update(&st, &[5.], &ActionDistribution::push(), StructureMode::Stack).unwrap();
        assert_eq!(push.values(), &[5., 2., 3.]);
        assert_eq!(push.mask(), &[1., 1., 1.]);
        let pop = update(&st, &[5.], &ActionDistribution::pop(), StructureMode::Stack).unwrap();
        assert_eq!(pop.values(), &[3., 0., 0.]);
        assert_eq!(pop.mask(), &[1., 0., 0.]);
        let a = ActionDistribution::new(0.5, 0.25, 0.25).unwrap();
        let mixed = update(&st, &[5.], &a, StructureMode::Stack).unwrap();
        assert!(close(mixed.values(), &[3.75, 1.75, 1.5], 1e-12));
        assert!(close(mixed.mask(), &[1.0, 0.75, 0.5], 1e-12));
        // input untouched
        assert_eq!(st.values(), &[2., 3., 0.]);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let st = StackState::<f64>::empty(3, 2).unwrap();
        assert!(update(&st, &[1.0], &ActionDistribution::push(), StructureMode::Stack).is_err());
        assert!(update(&st, &[f64::NAN, 0.0], &ActionDistribution::push(), StructureMode::Stack).is_err());
        let bad = ActionDistribution {
            push: 0.9,
            pop: 0.9,
            noop: 0.0,
        };
        assert!(update(&st, &[1.0, 0.0], &bad, StructureMode::Stack).is_err());
    }

    #[test]
    fn single_slot_uses_zero_pop_source() {
        let st = state(&[4.], &[1.], 1);
        let pop = update(&st, &[9.], &ActionDistribution::pop(), StructureMode::Stack).unwrap();
        assert_eq!((pop.values(), pop.mask()), (&[0.][..], &[0.][..]));
        let push = update(&st, &[9.], &ActionDistribution::push(), StructureMode::Stack).unwrap();
        assert_eq!((push.values(), push.mask()), (&[9.][..], &[1.][..]));
    }

    #[test]
    fn read_modes() {
        let st = state(&[4., 2.], &[1., 1.], 1);
        let mut p = params(1, 2, StackModes::default());
        // zero query: equal logits
        assert!((read(&st, &p).unwrap()[0] - 3.0).abs() < 1e-12);
        p.read_query = vec![1.0];
        assert!((read(&st, &p).unwrap()[0] - 3.762).abs() < 1e-3);
        p.modes.read = ReadMode::TopPeek;
        assert_eq!(read(&st, &p).unwrap(), vec![4.0]);
        let mut p = params(1, 2, StackModes {
            read: ReadMode::GlobalPosition,
            ..Default::default()
        });
        assert_eq!(p.read_query.len(), 2);
        p.read_query = vec![4.0, 2.0];
        assert!((read(&st, &p).unwrap()[0] - 3.762).abs() < 1e-3);
    }

    #[test]
    fn step_reads_after_update() {
        let mut p = params(2, 3, StackModes {
            read: ReadMode::TopPeek,
            action: ActionMode::PushOnly,
            ..Default::default()
        });
        let st = StackState::empty(3, 2).unwrap();
        let out = step(&st, &[1.5, -2.0], &p).unwrap();
        assert_eq!(out.read, vec![1.5, -2.0]);

        // push-only keeps the last S values, newest on top
        let mut cur = StackState::empty(3, 2).unwrap();
        for k in 1..=5 {
            cur = step(&cur, &[k as f64, -(k as f64)], &p).unwrap().state;
        }
        assert_eq!(cur.values(), &[5., -5., 4., -4., 3., -3.]);
        assert_eq!(cur.mask(), &[1., 1., 1.]);

        p.modes.action = ActionMode::Free;
        let out = step(&StackState::empty(3, 2).unwrap(), &[0.3, 0.7], &p).unwrap();
        for x in out.action.as_array() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn queue_appends_at_back_and_pops_front() {
        let p = params(1, 3, StackModes {
            structure: StructureMode::Queue,
            read: ReadMode::TopPeek,
            ..Default::default()
        });
        let mut st = StackState::empty(3, 1).unwrap();
        for v in [1.0, 2.0] {
            st = update(&st, &[v], &ActionDistribution::push(), StructureMode::Queue).unwrap();
        }
        assert!(close(st.values(), &[1.0, 2.0, 0.0], 1e-5));
        assert!(close(st.mask(), &[1.0, 1.0, 0.0], 1e-5));
        assert!((read(&st, &p).unwrap()[0] - 1.0).abs() < 1e-5);
        let st = update(&st, &[0.0], &ActionDistribution::pop(), StructureMode::Queue).unwrap();
        assert!(close(st.values(), &[2.0, 0.0, 0.0], 1e-5));
    }

    #[test]
    fn entropy_values() {
        assert_eq!(ActionDistribution::<f64>::push().entropy(), 0.0);
        let u = ActionDistribution::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!((u.entropy() - 3f64.ln()).abs() < 1e-12);
        let a = ActionDistribution::<f64>::new(0.5, 0.25, 0.25).unwrap();
        assert!((a.entropy() - 1.0397).abs() < 1e-3);
    }
}
