use crate::error::{Error, Result};
use crate::linalg::{matmul, Op, Real};
use crate::multihead::{MultiHeadStackParams, MultiHeadStackState};
use crate::stack::{step_traced, ActionDistribution, StackState, StepTrace};

use super::{IntegrationMode, LayerParams, Model, PositionalScheme};

pub(super) struct LayerCache<T> {
    pub x_in: Vec<T>,
    pub attn_inv: Vec<T>,
    pub a: Vec<T>,
    /// post-rotary queries and keys
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// per attention head, `n×n` row-stochastic (causal)
    pub probs: Vec<Vec<T>>,
    pub o: Vec<T>,
    pub x_mid: Vec<T>,
    pub mlp_inv: Vec<T>,
    pub b: Vec<T>,
    pub u: Vec<T>,
    pub s: Vec<T>,
}

pub(super) struct BoundaryCache<T> {
    pub input: Vec<T>,
    pub reads: Vec<T>,
    /// `[head][token]`
    pub steps: Vec<Vec<StepTrace<T>>>,
}

/// Action distributions produced at one stack boundary.
#[derive(Clone, Debug)]
pub struct ActionRecord<T> {
    /// Index of the layer the module follows.
    pub layer: usize,
    /// `[token][head]`
    pub per_token: Vec<Vec<ActionDistribution<T>>>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
pub struct ForwardTrace<T> {
    pub(super) tokens: Vec<u32>,
    pub(super) mode: IntegrationMode,
    pub(super) layers: Vec<LayerCache<T>>,
    pub(super) boundaries: Vec<Option<BoundaryCache<T>>>,
    pub(super) final_in: Vec<T>,
    pub(super) final_inv: Vec<T>,
    pub(super) final_normed: Vec<T>,
    /// `n × vocab`
    pub logits: Vec<T>,
    pub actions: Vec<ActionRecord<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mode(&self) -> IntegrationMode {
        self.mode
    }

    pub fn action_count(&self) -> usize {
        self.actions.iter().map(|r| r.per_token.iter().map(Vec::len).sum::<usize>()).sum()
    }
}

pub(super) fn rms_norm<T: Real>(x: &[T], g: &[T], d: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / T::of(d as f64);
        let r = T::one() / (ms + T::of(eps)).sqrt();
        inv[t] = r;
        for j in 0..d {
            y[t * d + j] = row[j] * r * g[j];
        }
    }
    (y, inv)
}

/// `cos`/`sin` tables of shape `n × head_dim/2`.
pub(super) fn rope_tables<T: Real>(n: usize, head_dim: usize, theta: f64) -> (Vec<T>, Vec<T>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(n * half);
    let mut sin = Vec::with_capacity(n * half);
    for p in 0..n {
        for i in 0..half {
            let freq = theta.powf(-2.0 * i as f64 / head_dim as f64);
            let ang = p as f64 * freq;
            cos.push(T::of(ang.cos()));
            sin.push(T::of(ang.sin()));
        }
    }
    (cos, sin)
}

/// Rotate every head of every row in place; `inverse` applies the
/// transpose rotation (used for gradients).
pub(super) fn apply_rope<T: Real>(x: &mut [T], d: usize, head_dim: usize, cos: &[T], sin: &[T], inverse: bool) {
    let n = x.len() / d;
    let half = head_dim / 2;
    for t in 0..n {
        for h in 0..d / head_dim {
            let base = t * d + h * head_dim;
            for i in 0..half {
                let (c, s) = (cos[t * half + i], sin[t * half + i]);
                let s = if inverse { -s } else { s };
                let (x0, x1) = (x[base + 2 * i], x[base + 2 * i + 1]);
                x[base + 2 * i] = x0 * c - x1 * s;
                x[base + 2 * i + 1] = x0 * s + x1 * c;
            }
        }
    }
}

pub(super) fn gather_head<T: Real>(x: &[T], n: usize, d: usize, h: usize, hd: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * hd);
    for t in 0..n {
        out.extend_from_slice(&x[t * d + h * hd..t * d + (h + 1) * hd]);
    }
    out
}

pub(super) fn scatter_head<T: Real>(src: &[T], dst: &mut [T], n: usize, d: usize, h: usize, hd: usize) {
    for t in 0..n {
        dst[t * d + h * hd..t * d + (h + 1) * hd].copy_from_slice(&src[t * hd..(t + 1) * hd]);
    }
}

pub(super) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Model<T> {
    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfVocab(bad as usize));
        }
        Ok(())
    }

    /// Logits (`n × vocab`) under the configured integration mode.
    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<T>> {
        Ok(self.forward_traced(tokens, self.config.integration)?.logits)
    }

    pub fn forward_layerwise(&self, tokens: &[u32]) -> Result<Vec<T>> {
        Ok(self.forward_traced(tokens, IntegrationMode::Layerwise)?.logits)
    }

    pub fn forward_temporal(&self, tokens: &[u32]) -> Result<Vec<T>> {
        Ok(self.forward_traced(tokens, IntegrationMode::Temporal)?.logits)
    }

    pub fn forward_traced(&self, tokens: &[u32], mode: IntegrationMode) -> Result<ForwardTrace<T>> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let (n, d, v) = (tokens.len(), cfg.d_model, cfg.vocab_size);
        let mut x = Vec::with_capacity(n * d);
        for &tok in tokens {
            let t = tok as usize;
            x.extend_from_slice(&self.params.embed[t * d..(t + 1) * d]);
        }
        let rope = match cfg.positional {
            PositionalScheme::Rope => Some(rope_tables::<T>(n, cfg.head_dim(), cfg.rope_theta)),
            PositionalScheme::None => None,
        };

        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut boundaries = Vec::with_capacity(cfg.n_layers);
        let mut actions = Vec::new();
        let mut token_states: Option<Vec<MultiHeadStackState<T>>> = None;
        for (l, lp) in self.params.layers.iter().enumerate() {
            let (out, cache) = self.layer_forward(lp, x, n, rope.as_ref());
            layers.push(cache);
            x = out;
            match &self.params.stacks[l] {
                Some(sp) => {
                    let (out, cache, record) = boundary_forward(sp, &x, n, mode, &mut token_states, l)?;
                    x = out;
                    boundaries.push(Some(cache));
                    actions.push(record);
                }
                None => boundaries.push(None),
            }
        }

        let (normed, inv) = rms_norm(&x, &self.params.final_norm, d, cfg.norm_eps);
        let mut logits = vec![T::zero(); n * v];
        matmul(&normed, Op::N, &self.params.lm_head, Op::N, &mut logits, n, d, v, false);
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            mode,
            layers,
            boundaries,
            final_in: x,
            final_inv: inv,
            final_normed: normed,
            logits,
            actions,
        })
    }

    fn layer_forward(
        &self,
        lp: &LayerParams<T>,
        x_in: Vec<T>,
        n: usize,
        rope: Option<&(Vec<T>, Vec<T>)>,
    ) -> (Vec<T>, LayerCache<T>) {
        let cfg = &self.config;
        let (d, f, hd) = (cfg.d_model, cfg.ffn_dim, cfg.head_dim());
        let (a, attn_inv) = rms_norm(&x_in, &lp.attn_norm, d, cfg.norm_eps);
        let proj = |w: &[T]| {
            let mut out = vec![T::zero(); n * d];
            matmul(&a, Op::N, w, Op::N, &mut out, n, d, d, false);
            out
        };
        let (mut q, mut k, v) = (proj(&lp.wq), proj(&lp.wk), proj(&lp.wv));
        if let Some((cos, sin)) = rope {
            apply_rope(&mut q, d, hd, cos, sin, false);
            apply_rope(&mut k, d, hd, cos, sin, false);
        }
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut o = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(cfg.n_attn_heads);
        for h in 0..cfg.n_attn_heads {
            let qh = gather_head(&q, n, d, h, hd);
            let kh = gather_head(&k, n, d, h, hd);
            let vh = gather_head(&v, n, d, h, hd);
            let mut p = vec![T::zero(); n * n];
            matmul(&qh, Op::N, &kh, Op::T, &mut p, n, hd, n, false);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let max = row[..=i].iter().fold(T::neg_infinity(), |m, &x| m.max(x * scale));
                let mut sum = T::zero();
                for x in row[..=i].iter_mut() {
                    *x = (*x * scale - max).exp();
                    sum += *x;
                }
                for x in row[..=i].iter_mut() {
                    *x /= sum;
                }
                row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
            }
            let mut oh = vec![T::zero(); n * hd];
            matmul(&p, Op::N, &vh, Op::N, &mut oh, n, n, hd, false);
            scatter_head(&oh, &mut o, n, d, h, hd);
            probs.push(p);
        }
        let mut x_mid = x_in.clone();
        matmul(&o, Op::N, &lp.wo, Op::N, &mut x_mid, n, d, d, true);

        let (b, mlp_inv) = rms_norm(&x_mid, &lp.mlp_norm, d, cfg.norm_eps);
        let mut u = vec![T::zero(); n * f];
        matmul(&b, Op::N, &lp.w1, Op::N, &mut u, n, d, f, false);
        let s: Vec<T> = u.iter().map(|&x| x * sigmoid(x)).collect();
        let mut x_out = x_mid.clone();
        matmul(&s, Op::N, &lp.w2, Op::N, &mut x_out, n, f, d, true);
        (
            x_out,
            LayerCache {
                x_in,
                attn_inv,
                a,
                q,
                k,
                v,
                probs,
                o,
                x_mid,
                mlp_inv,
                b,
                u,
                s,
            },
        )
    }
}

fn boundary_forward<T: Real>(
    sp: &MultiHeadStackParams<T>,
    x: &[T],
    n: usize,
    mode: IntegrationMode,
    token_states: &mut Option<Vec<MultiHeadStackState<T>>>,
    layer: usize,
) -> Result<(Vec<T>, BoundaryCache<T>, ActionRecord<T>)> {
    let (nh, ds) = (sp.n_heads(), sp.head_width());
    let k = sp.stack_width();
    let z = sp.project_down(x, n);
    let mut reads = vec![T::zero(); n * k];
    let mut steps: Vec<Vec<StepTrace<T>>> = (0..nh).map(|_| Vec::with_capacity(n)).collect();
    let mut per_token = vec![Vec::with_capacity(nh); n];
    let mut run = |state: &StackState<T>, t: usize, j: usize| -> Result<StackState<T>> {
        let off = t * k + j * ds;
        let (out, trace) = step_traced(state, &z[off..off + ds], &sp.heads[j])?;
        reads[off..off + ds].copy_from_slice(&out.read);
        per_token[t].push(out.action);
        steps[j].push(trace);
        Ok(out.state)
    };
    match mode {
        IntegrationMode::Temporal => {
            let empty = MultiHeadStackState::for_params(sp);
            let mut states = empty.per_head;
            for t in 0..n {
                for (j, st) in states.iter_mut().enumerate() {
                    *st = run(st, t, j)?;
                }
            }
        }
        IntegrationMode::Layerwise => {
            let states = token_states.get_or_insert_with(|| vec![MultiHeadStackState::for_params(sp); n]);
            for (t, st) in states.iter_mut().enumerate() {
                if st.per_head.len() != nh || st.per_head[0].slots() != sp.slots() || st.per_head[0].width() != ds {
                    return Err(Error::InvalidConfig(
                        "layerwise integration needs identical stack shapes at every boundary".into(),
                    ));
                }
                for j in 0..nh {
                    st.per_head[j] = run(&st.per_head[j], t, j)?;
                }
            }
        }
    }
    let out = sp.combine(x, &reads, n);
    Ok((
        out,
        BoundaryCache {
            input: x.to_vec(),
            reads,
            steps,
        },
        ActionRecord { layer, per_token },
    ))
}
