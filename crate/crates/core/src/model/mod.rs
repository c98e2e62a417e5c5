//! Decoder-only transformer with multi-head stack modules between layers.
//!
//! Layers are pre-norm (RMSNorm) blocks of causal multi-head attention with
//! rotary position embeddings followed by a SiLU feed-forward. When a stack
//! module follows layer `l`, its output `g·h + W_up·reads` replaces the
//! residual stream that feeds layer `l + 1` (or the final norm).
//!
//! Weight matrices are stored input-major (`d_in × d_out`) so activations
//! multiply from the left.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
mod generate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{IntegrationMode, ModelConfig, NamedPlacement, Placement, PositionalScheme, StackConfig};
pub use forward::{ActionRecord, ForwardTrace};

use crate::error::Result;
use crate::linalg::Real;
use crate::multihead::{init_params, normal_vec, MultiHeadStackParams};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Vec<T>,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    pub mlp_norm: Vec<T>,
    pub w1: Vec<T>,
    pub w2: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Self {
            attn_norm: z(&self.attn_norm),
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            mlp_norm: z(&self.mlp_norm),
            w1: z(&self.w1),
            w2: z(&self.w2),
        }
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `stacks[l]` follows layer `l`.
    pub stacks: Vec<Option<MultiHeadStackParams<T>>>,
    pub final_norm: Vec<T>,
    pub lm_head: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            embed: vec![T::zero(); self.embed.len()],
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
            stacks: self.stacks.iter().map(|s| s.as_ref().map(|s| s.zeros_like())).collect(),
            final_norm: vec![T::zero(); self.final_norm.len()],
            lm_head: vec![T::zero(); self.lm_head.len()],
        }
    }

    /// Visit every tensor in a fixed order as `(name, data)`.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[T])) {
        f("embed", &self.embed);
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layers.{i}.attn_norm"), &l.attn_norm);
            f(&format!("layers.{i}.wq"), &l.wq);
            f(&format!("layers.{i}.wk"), &l.wk);
            f(&format!("layers.{i}.wv"), &l.wv);
            f(&format!("layers.{i}.wo"), &l.wo);
            f(&format!("layers.{i}.mlp_norm"), &l.mlp_norm);
            f(&format!("layers.{i}.w1"), &l.w1);
            f(&format!("layers.{i}.w2"), &l.w2);
        }
        for (i, s) in self.stacks.iter().enumerate() {
            if let Some(s) = s {
                s.visit(&format!("stacks.{i}."), f);
            }
        }
        f("final_norm", &self.final_norm);
        f("lm_head", &self.lm_head);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("embed", &mut self.embed);
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{i}.attn_norm"), &mut l.attn_norm);
            f(&format!("layers.{i}.wq"), &mut l.wq);
            f(&format!("layers.{i}.wk"), &mut l.wk);
            f(&format!("layers.{i}.wv"), &mut l.wv);
            f(&format!("layers.{i}.wo"), &mut l.wo);
            f(&format!("layers.{i}.mlp_norm"), &mut l.mlp_norm);
            f(&format!("layers.{i}.w1"), &mut l.w1);
            f(&format!("layers.{i}.w2"), &mut l.w2);
        }
        for (i, s) in self.stacks.iter_mut().enumerate() {
            if let Some(s) = s {
                s.visit_mut(&format!("stacks.{i}."), f);
            }
        }
        f("final_norm", &mut self.final_norm);
        f("lm_head", &mut self.lm_head);
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        let mut flat = Vec::new();
        other.visit(&mut |_, x| flat.push(x.to_vec()));
        let mut it = flat.into_iter();
        self.visit_mut(&mut |_, x| {
            let o = it.next().expect("same structure");
            for (a, b) in x.iter_mut().zip(o) {
                *a += alpha * b;
            }
        });
    }

    pub fn sum_of_squares(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, x| s += x.iter().map(|v| v.f64() * v.f64()).sum::<f64>());
        s
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, x| ok &= x.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Trainable parameter counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub backbone: usize,
    pub stack: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    /// Random initialisation from a seed. Stack modules start as the
    /// identity map (zero up-projection, unit gate).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, v, l) = (config.d_model, config.ffn_dim, config.vocab_size, config.n_layers);
        let proj_std = (d as f64).powf(-0.5);
        let resid_std = proj_std / (2.0 * l as f64).sqrt();
        let ones = |n| vec![T::one(); n];
        let embed = normal_vec(v * d, 1.0, &mut rng);
        let layers = (0..l)
            .map(|_| LayerParams {
                attn_norm: ones(d),
                wq: normal_vec(d * d, proj_std, &mut rng),
                wk: normal_vec(d * d, proj_std, &mut rng),
                wv: normal_vec(d * d, proj_std, &mut rng),
                wo: normal_vec(d * d, resid_std, &mut rng),
                mlp_norm: ones(d),
                w1: normal_vec(d * f, proj_std, &mut rng),
                w2: normal_vec(f * d, (f as f64).powf(-0.5) / (2.0 * l as f64).sqrt(), &mut rng),
            })
            .collect();
        let modes = config.stack.modes();
        let stacks = config
            .stack_after()
            .into_iter()
            .map(|has| {
                has.then(|| {
                    let s = &config.stack;
                    init_params(d, s.heads, s.head_width, s.slots, modes, &mut rng)
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams {
            embed,
            layers,
            stacks,
            final_norm: ones(d),
            lm_head: normal_vec(d * v, proj_std, &mut rng),
        };
        Ok(Self { config, params })
    }

    pub fn count_params(&self) -> ParamCount {
        let stack: usize = self.params.stacks.iter().flatten().map(|s| s.param_count()).sum();
        let mut total = 0;
        self.params.visit(&mut |_, x| total += x.len());
        ParamCount {
            backbone: total - stack,
            stack,
            total,
        }
    }

    /// Same weights with the stack modules dropped.
    pub fn without_stack(&self) -> Self {
        let mut config = self.config.clone();
        config.stack.enabled = false;
        let mut params = self.params.clone();
        params.stacks.iter_mut().for_each(|s| *s = None);
        Self { config, params }
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut flat = Vec::new();
        self.params.visit(&mut |_, x| flat.push(x.iter().map(|v| U::of(v.f64())).collect::<Vec<U>>()));
        let mut out = Model::<U>::new(self.config.clone(), 0).expect("config already validated");
        let mut it = flat.into_iter();
        out.params.visit_mut(&mut |_, x| x.copy_from_slice(&it.next().expect("same structure")));
        out
    }
}
