use crate::linalg::{matmul, softmax_backward, Op, Real};
use crate::multihead::MultiHeadStackParams;
use crate::stack::{step_backward, StackState};

use super::forward::{apply_rope, gather_head, rope_tables, scatter_head, sigmoid, BoundaryCache, ForwardTrace, LayerCache};
use super::{IntegrationMode, LayerParams, Model, ModelParams, PositionalScheme};

/// Adds dL/dx for `y = rms_norm(x) * g` into `d_x` and dL/dg into `d_g`.
fn rms_norm_backward<T: Real>(x: &[T], g: &[T], inv: &[T], d_y: &[T], d: usize, d_x: &mut [T], d_g: &mut [T]) {
    let n = x.len() / d;
    for t in 0..n {
        let r = inv[t];
        let row = &x[t * d..(t + 1) * d];
        let dy = &d_y[t * d..(t + 1) * d];
        let mut inner = T::zero();
        for j in 0..d {
            inner += g[j] * dy[j] * row[j];
            d_g[j] += dy[j] * row[j] * r;
        }
        let coef = r * r * r * inner / T::of(d as f64);
        for j in 0..d {
            d_x[t * d + j] += r * g[j] * dy[j] - coef * row[j];
        }
    }
}

/// d(w·H(a))/da with H(a) = -Σ a ln a.
fn entropy_grad<T: Real>(a: [T; 3], w: T) -> [T; 3] {
    let floor = T::of(1e-30);
    a.map(|p| -w * (p.max(floor).ln() + T::one()))
}

impl<T: Real> Model<T> {
    /// Reverse pass. `d_logits` is dL/dlogits (`n × vocab`); every action
    /// distribution additionally contributes `entropy_weight · H(a)` to the
    /// loss. Gradients are accumulated into `grads`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_logits: &[T], entropy_weight: T, grads: &mut ModelParams<T>) {
        let cfg = &self.config;
        let (n, d, v) = (trace.len(), cfg.d_model, cfg.vocab_size);
        assert_eq!(d_logits.len(), n * v, "d_logits shape");

        matmul(&trace.final_normed, Op::T, d_logits, Op::N, &mut grads.lm_head, d, n, v, true);
        let mut d_normed = vec![T::zero(); n * d];
        matmul(d_logits, Op::N, &self.params.lm_head, Op::T, &mut d_normed, n, v, d, false);
        let mut dx = vec![T::zero(); n * d];
        rms_norm_backward(
            &trace.final_in,
            &self.params.final_norm,
            &trace.final_inv,
            &d_normed,
            d,
            &mut dx,
            &mut grads.final_norm,
        );

        let rope = match cfg.positional {
            PositionalScheme::Rope => Some(rope_tables::<T>(n, cfg.head_dim(), cfg.rope_theta)),
            PositionalScheme::None => None,
        };
        // layerwise: per token, per head gradient w.r.t. the state leaving
        // the boundary currently being processed
        let mut d_states: Vec<Option<Vec<StackState<T>>>> = vec![None; n];

        for l in (0..cfg.n_layers).rev() {
            if let (Some(sp), Some(cache)) = (&self.params.stacks[l], &trace.boundaries[l]) {
                let g = grads.stacks[l].as_mut().expect("grad structure matches params");
                dx = boundary_backward(sp, cache, &dx, n, trace.mode, entropy_weight, &mut d_states, g);
            }
            dx = self.layer_backward(&self.params.layers[l], &trace.layers[l], &dx, n, rope.as_ref(), &mut grads.layers[l]);
        }

        for (t, &tok) in trace.tokens.iter().enumerate() {
            let row = &mut grads.embed[tok as usize * d..(tok as usize + 1) * d];
            for (g, &x) in row.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
                *g += x;
            }
        }
    }

    fn layer_backward(
        &self,
        lp: &LayerParams<T>,
        c: &LayerCache<T>,
        d_out: &[T],
        n: usize,
        rope: Option<&(Vec<T>, Vec<T>)>,
        g: &mut LayerParams<T>,
    ) -> Vec<T> {
        let cfg = &self.config;
        let (d, f, hd) = (cfg.d_model, cfg.ffn_dim, cfg.head_dim());

        // feed-forward
        let mut d_mid = d_out.to_vec();
        matmul(&c.s, Op::T, d_out, Op::N, &mut g.w2, f, n, d, true);
        let mut du = vec![T::zero(); n * f];
        matmul(d_out, Op::N, &lp.w2, Op::T, &mut du, n, d, f, false);
        for (dv, &u) in du.iter_mut().zip(&c.u) {
            let sg = sigmoid(u);
            *dv *= sg * (T::one() + u * (T::one() - sg));
        }
        matmul(&c.b, Op::T, &du, Op::N, &mut g.w1, d, n, f, true);
        let mut db = vec![T::zero(); n * d];
        matmul(&du, Op::N, &lp.w1, Op::T, &mut db, n, f, d, false);
        rms_norm_backward(&c.x_mid, &lp.mlp_norm, &c.mlp_inv, &db, d, &mut d_mid, &mut g.mlp_norm);

        // attention
        let mut d_in = d_mid.clone();
        matmul(&c.o, Op::T, &d_mid, Op::N, &mut g.wo, d, n, d, true);
        let mut d_o = vec![T::zero(); n * d];
        matmul(&d_mid, Op::N, &lp.wo, Op::T, &mut d_o, n, d, d, false);
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        for h in 0..cfg.n_attn_heads {
            let p = &c.probs[h];
            let doh = gather_head(&d_o, n, d, h, hd);
            let qh = gather_head(&c.q, n, d, h, hd);
            let kh = gather_head(&c.k, n, d, h, hd);
            let vh = gather_head(&c.v, n, d, h, hd);
            let mut dvh = vec![T::zero(); n * hd];
            matmul(p, Op::T, &doh, Op::N, &mut dvh, n, n, hd, false);
            let mut dp = vec![T::zero(); n * n];
            matmul(&doh, Op::N, &vh, Op::T, &mut dp, n, hd, n, false);
            let mut ds = vec![T::zero(); n * n];
            for i in 0..n {
                let r = i * n..i * n + i + 1;
                softmax_backward(&p[r.clone()], &dp[r.clone()], &mut ds[r.clone()]);
                ds[r].iter_mut().for_each(|x| *x *= scale);
            }
            let mut dqh = vec![T::zero(); n * hd];
            matmul(&ds, Op::N, &kh, Op::N, &mut dqh, n, n, hd, false);
            let mut dkh = vec![T::zero(); n * hd];
            matmul(&ds, Op::T, &qh, Op::N, &mut dkh, n, n, hd, false);
            scatter_head(&dqh, &mut dq, n, d, h, hd);
            scatter_head(&dkh, &mut dk, n, d, h, hd);
            scatter_head(&dvh, &mut dv, n, d, h, hd);
        }
        if let Some((cos, sin)) = rope {
            apply_rope(&mut dq, d, hd, cos, sin, true);
            apply_rope(&mut dk, d, hd, cos, sin, true);
        }
        let mut da = vec![T::zero(); n * d];
        for (dw, w, dy) in [(&mut g.wq, &lp.wq, &dq), (&mut g.wk, &lp.wk, &dk), (&mut g.wv, &lp.wv, &dv)] {
            matmul(&c.a, Op::T, dy, Op::N, dw, d, n, d, true);
            matmul(dy, Op::N, w, Op::T, &mut da, n, d, d, true);
        }
        rms_norm_backward(&c.x_in, &lp.attn_norm, &c.attn_inv, &da, d, &mut d_in, &mut g.attn_norm);
        d_in
    }
}

#[allow(clippy::too_many_arguments)]
fn boundary_backward<T: Real>(
    sp: &MultiHeadStackParams<T>,
    cache: &BoundaryCache<T>,
    d_out: &[T],
    n: usize,
    mode: IntegrationMode,
    entropy_weight: T,
    d_states: &mut [Option<Vec<StackState<T>>>],
    g: &mut MultiHeadStackParams<T>,
) -> Vec<T> {
    let (nh, ds) = (sp.n_heads(), sp.head_width());
    let k = sp.stack_width();
    let mut d_in = vec![T::zero(); n * sp.d_model()];
    let d_reads = sp.combine_backward(&cache.input, &cache.reads, d_out, n, &mut d_in, g);
    let mut d_z = vec![T::zero(); n * k];
    let mut run = |j: usize, t: usize, d_post: Option<&StackState<T>>, g: &mut MultiHeadStackParams<T>| {
        let tr = &cache.steps[j][t];
        let off = t * k + j * ds;
        let da = entropy_grad(tr.action().as_array(), entropy_weight);
        let out = step_backward(tr, &sp.heads[j], d_post, &d_reads[off..off + ds], da, &mut g.heads[j]);
        d_z[off..off + ds].copy_from_slice(&out.d_h);
        out.d_state
    };
    match mode {
        IntegrationMode::Temporal => {
            for j in 0..nh {
                let mut carry: Option<StackState<T>> = None;
                for t in (0..n).rev() {
                    carry = Some(run(j, t, carry.as_ref(), g));
                }
            }
        }
        IntegrationMode::Layerwise => {
            for (t, slot) in d_states.iter_mut().enumerate() {
                let prev = slot.take();
                let next = (0..nh)
                    .map(|j| run(j, t, prev.as_ref().map(|p| &p[j]), g))
                    .collect();
                *slot = Some(next);
            }
        }
    }
    sp.project_down_backward(&cache.input, &d_z, n, &mut d_in, g);
    d_in
}
