use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::{ActionMode, ReadMode, StackModes, StructureMode};

/// How stack state is threaded through the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    /// Every token gets a fresh stack that is carried upward through the
    /// boundaries of that token only. All tokens are independent.
    Layerwise,
    /// Every boundary owns one stack per sequence, updated left to right
    /// over the tokens.
    #[default]
    Temporal,
}

impl std::str::FromStr for IntegrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(Self::Layerwise),
            "temporal" => Ok(Self::Temporal),
            other => Err(Error::InvalidConfig(format!("unknown integration mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    Rope,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPlacement {
    /// After every layer except the last.
    Between,
    /// After every layer.
    All,
}

/// Which layer outputs are followed by a stack module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Placement {
    Named(NamedPlacement),
    /// Explicit 0-based layer indices.
    Layers(Vec<usize>),
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Named(NamedPlacement::Between)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// S
    #[serde(default = "default_slots")]
    pub slots: usize,
    /// H
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// d_s
    #[serde(default = "default_head_width")]
    pub head_width: usize,
    #[serde(default)]
    pub read_mode: ReadMode,
    #[serde(default)]
    pub structure_mode: StructureMode,
    #[serde(default)]
    pub action_mode: ActionMode,
    #[serde(default)]
    pub placement: Placement,
}

fn yes() -> bool {
    true
}
fn default_slots() -> usize {
    24
}
fn default_heads() -> usize {
    4
}
fn default_head_width() -> usize {
    8
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            slots: default_slots(),
            heads: default_heads(),
            head_width: default_head_width(),
            read_mode: ReadMode::default(),
            structure_mode: StructureMode::default(),
            action_mode: ActionMode::default(),
            placement: Placement::default(),
        }
    }
}

impl StackConfig {
    pub fn modes(&self) -> StackModes {
        StackModes {
            structure: self.structure_mode,
            action: self.action_mode,
            read: self.read_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_d")]
    pub d_model: usize,
    #[serde(default = "default_attn_heads")]
    pub n_attn_heads: usize,
    #[serde(default = "default_ffn")]
    pub ffn_dim: usize,
    /// Filled in from the task vocabulary when zero.
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default = "default_max_len")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub positional: PositionalScheme,
    #[serde(default = "default_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    #[serde(default)]
    pub integration: IntegrationMode,
    #[serde(default)]
    pub stack: StackConfig,
}

fn default_layers() -> usize {
    5
}
fn default_d() -> usize {
    64
}
fn default_attn_heads() -> usize {
    4
}
fn default_ffn() -> usize {
    256
}
fn default_max_len() -> usize {
    4096
}
fn default_theta() -> f64 {
    100_000.0
}
fn default_eps() -> f64 {
    1e-5
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: default_layers(),
            d_model: default_d(),
            n_attn_heads: default_attn_heads(),
            ffn_dim: default_ffn(),
            vocab_size: 0,
            max_seq_len: default_max_len(),
            positional: PositionalScheme::default(),
            rope_theta: default_theta(),
            norm_eps: default_eps(),
            integration: IntegrationMode::default(),
            stack: StackConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1".into());
        }
        if self.d_model == 0 || self.n_attn_heads == 0 || self.ffn_dim == 0 {
            return bad("d_model, n_attn_heads and ffn_dim must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_attn_heads) {
            return bad(format!(
                "d_model {} not divisible by n_attn_heads {}",
                self.d_model, self.n_attn_heads
            ));
        }
        if self.positional == PositionalScheme::Rope && !(self.d_model / self.n_attn_heads).is_multiple_of(2) {
            return bad("rotary embeddings need an even head dimension".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive".into());
        }
        if !(self.rope_theta > 0.0) || !(self.norm_eps > 0.0) {
            return bad("rope_theta and norm_eps must be positive".into());
        }
        let s = &self.stack;
        if s.enabled {
            if s.slots == 0 || s.heads == 0 || s.head_width == 0 {
                return bad("stack slots, heads and head_width must be positive".into());
            }
            if let Placement::Layers(ls) = &s.placement {
                if let Some(l) = ls.iter().find(|&&l| l >= self.n_layers) {
                    return bad(format!("stack placement layer {l} out of range"));
                }
            }
        }
        Ok(())
    }

    /// `true` at index `l` when a stack module follows layer `l`.
    pub fn stack_after(&self) -> Vec<bool> {
        let l = self.n_layers;
        if !self.stack.enabled {
            return vec![false; l];
        }
        match &self.stack.placement {
            Placement::Named(NamedPlacement::Between) => (0..l).map(|i| i + 1 < l).collect(),
            Placement::Named(NamedPlacement::All) => vec![true; l],
            Placement::Layers(ls) => (0..l).map(|i| ls.contains(&i)).collect(),
        }
    }

    pub fn n_boundaries(&self) -> usize {
        self.stack_after().iter().filter(|b| **b).count()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_attn_heads
    }
}
