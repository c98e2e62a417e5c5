//! Central finite-difference checks of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IntegrationMode, Model, ModelConfig, NamedPlacement, Placement};
use crate::multihead::{init_params, mh_step_backward, mh_step_traced, MultiHeadStackParams, MultiHeadStackState};
use crate::stack::{
    step_backward, step_traced, ActionDistribution, ActionMode, ReadMode, StackModes, StackParams, StackState,
    StructureMode,
};

const ENTROPY_WEIGHT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    StackCore,
    Multihead,
    BackboneTiny,
}

impl GradScope {
    pub const ALL: [GradScope; 3] = [GradScope::StackCore, GradScope::Multihead, GradScope::BackboneTiny];
}

impl std::str::FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stack_core" => Ok(Self::StackCore),
            "multihead" | "multihead_stack" => Ok(Self::Multihead),
            "backbone_tiny" => Ok(Self::BackboneTiny),
            other => Err(Error::InvalidConfig(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradGroup {
    pub name: String,
    pub count: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub scope: GradScope,
    pub eps: f64,
    pub tolerance: f64,
    pub groups: Vec<GradGroup>,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Tensors = Vec<(String, Vec<f64>)>;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn compare(
    base: &Tensors,
    analytic: &Tensors,
    eps: f64,
    prefix: &str,
    loss: &dyn Fn(&Tensors) -> Result<f64>,
) -> Result<Vec<GradGroup>> {
    let mut groups = Vec::with_capacity(base.len());
    for (k, (name, data)) in base.iter().enumerate() {
        let mut g = GradGroup {
            name: format!("{prefix}{name}"),
            count: data.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for i in 0..data.len() {
            let mut probe = base.clone();
            probe[k].1[i] = data[i] + eps;
            let up = loss(&probe)?;
            probe[k].1[i] = data[i] - eps;
            let down = loss(&probe)?;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite("gradcheck loss"));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k].1[i];
            if !a.is_finite() {
                return Err(Error::NonFinite("analytic gradient"));
            }
            g.max_rel_error = g.max_rel_error.max(relative_error(a, numeric));
            g.max_abs_error = g.max_abs_error.max((a - numeric).abs());
        }
        groups.push(g);
    }
    Ok(groups)
}

fn entropy_term(a: &ActionDistribution<f64>) -> f64 {
    ENTROPY_WEIGHT * a.entropy()
}

fn entropy_grad(a: &ActionDistribution<f64>) -> [f64; 3] {
    a.as_array().map(|p| -ENTROPY_WEIGHT * (p.max(1e-30).ln() + 1.0))
}

fn normals<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

/// Finite-difference check of one scope. The loss is the sum of squares
/// of the outputs (reads, hidden states or logits) plus a fixed multiple
/// of the action entropies, so the entropy path is covered as well.
pub fn gradcheck(scope: GradScope, eps: f64, tol: f64, seed: u64) -> Result<GradReport> {
    let groups = match scope {
        GradScope::StackCore => stack_core(eps, seed)?,
        GradScope::Multihead => multihead(eps, seed)?,
        GradScope::BackboneTiny => backbone_tiny(eps, seed)?,
    };
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        scope,
        eps,
        tolerance: tol,
        groups,
        max_rel_error,
        passed: max_rel_error < tol,
    })
}

fn stack_core(eps: f64, seed: u64) -> Result<Vec<GradGroup>> {
    let (w, s, steps) = (3, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let mut cases = Vec::new();
    for structure in [StructureMode::Stack, StructureMode::Queue] {
        for read in [ReadMode::GlobalContent, ReadMode::GlobalPosition, ReadMode::TopPeek] {
            cases.push(StackModes {
                structure,
                action: ActionMode::Free,
                read,
            });
        }
        cases.push(StackModes {
            structure,
            action: ActionMode::PushOnly,
            read: ReadMode::GlobalContent,
        });
    }
    for modes in cases {
        let q = StackParams::<f64>::query_len(w, s, modes.read);
        let base: Tensors = vec![
            ("action".into(), normals(3 * w, 1.5, &mut rng)),
            ("read_query".into(), normals(q, 1.0, &mut rng)),
            ("inputs".into(), normals(steps * w, 1.0, &mut rng)),
            ("initial.values".into(), normals(s * w, 1.0, &mut rng)),
            (
                "initial.mask".into(),
                (0..s).map(|_| rng.random_range(0.1..0.9)).collect(),
            ),
        ];
        let build = |t: &Tensors| -> Result<(StackParams<f64>, StackState<f64>)> {
            let p = StackParams::new(w, s, t[0].1.clone(), t[1].1.clone(), modes)?;
            let st = StackState::from_parts(s, w, t[3].1.clone(), t[4].1.clone())?;
            Ok((p, st))
        };
        let loss = |t: &Tensors| -> Result<f64> {
            let (p, mut st) = build(t)?;
            let mut l = 0.0;
            for x in t[2].1.chunks(w) {
                let (out, _) = step_traced(&st, x, &p)?;
                l += out.read.iter().map(|v| v * v).sum::<f64>() + entropy_term(&out.action);
                st = out.state;
            }
            Ok(l)
        };

        let (p, mut st) = build(&base)?;
        let mut traces = Vec::new();
        for x in base[2].1.chunks(w) {
            let (out, tr) = step_traced(&st, x, &p)?;
            traces.push((tr, out.read));
            st = out.state;
        }
        let mut grads = p.zeros_like();
        let mut d_inputs = vec![0.0; steps * w];
        let mut carry: Option<StackState<f64>> = None;
        for (t, (tr, read)) in traces.iter().enumerate().rev() {
            let d_read: Vec<f64> = read.iter().map(|v| 2.0 * v).collect();
            let da = entropy_grad(tr.action());
            let g = step_backward(tr, &p, carry.as_ref(), &d_read, da, &mut grads);
            d_inputs[t * w..(t + 1) * w].copy_from_slice(&g.d_h);
            carry = Some(g.d_state);
        }
        let d0 = carry.expect("at least one step");
        let analytic: Tensors = vec![
            ("action".into(), grads.action),
            ("read_query".into(), grads.read_query),
            ("inputs".into(), d_inputs),
            ("initial.values".into(), d0.values().to_vec()),
            ("initial.mask".into(), d0.mask().to_vec()),
        ];
        let prefix = format!(
            "{}.{}.{}.",
            snake(&modes.structure),
            snake(&modes.action),
            snake(&modes.read)
        );
        groups.extend(compare(&base, &analytic, eps, &prefix, &loss)?);
    }
    Ok(groups)
}

fn snake<S: Serialize>(v: &S) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn mh_tensors(p: &MultiHeadStackParams<f64>) -> Tensors {
    let mut t = Vec::new();
    p.visit("", &mut |name, x| t.push((name.to_string(), x.to_vec())));
    t
}

fn mh_load(p: &mut MultiHeadStackParams<f64>, t: &[(String, Vec<f64>)]) {
    let mut it = t.iter();
    p.visit_mut("", &mut |_, x| x.copy_from_slice(&it.next().expect("same layout").1));
}

fn multihead(eps: f64, seed: u64) -> Result<Vec<GradGroup>> {
    let (d, nh, ds, s, steps) = (6, 2, 3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    for structure in [StructureMode::Stack, StructureMode::Queue] {
        let modes = StackModes {
            structure,
            ..Default::default()
        };
        let mut proto = init_params::<f64, _>(d, nh, ds, s, modes, &mut rng)?;
        proto.w_up = normals(proto.w_up.len(), 0.5, &mut rng);
        proto.gate = 0.8;
        proto.heads.iter_mut().for_each(|h| h.action = normals(h.action.len(), 1.5, &mut rng));
        let mut base = mh_tensors(&proto);
        base.push(("inputs".into(), normals(steps * d, 1.0, &mut rng)));
        let loss = |t: &Tensors| -> Result<f64> {
            let mut p = proto.clone();
            mh_load(&mut p, &t[..t.len() - 1]);
            let mut st = MultiHeadStackState::for_params(&p);
            let mut l = 0.0;
            for x in t[t.len() - 1].1.chunks(d) {
                let (out, _) = mh_step_traced(&st, x, &p)?;
                l += out.hidden.iter().map(|v| v * v).sum::<f64>();
                l += out.actions.iter().map(entropy_term).sum::<f64>();
                st = out.state;
            }
            Ok(l)
        };

        let p = proto.clone();
        let mut st = MultiHeadStackState::for_params(&p);
        let mut traces = Vec::new();
        for x in base[base.len() - 1].1.chunks(d) {
            let (out, tr) = mh_step_traced(&st, x, &p)?;
            traces.push((tr, out.hidden, out.actions));
            st = out.state;
        }
        let mut grads = p.zeros_like();
        let mut d_inputs = vec![0.0; steps * d];
        let mut carry: Option<MultiHeadStackState<f64>> = None;
        for (t, (tr, hidden, actions)) in traces.iter().enumerate().rev() {
            let d_hidden: Vec<f64> = hidden.iter().map(|v| 2.0 * v).collect();
            let da: Vec<[f64; 3]> = actions.iter().map(entropy_grad).collect();
            let g = mh_step_backward(tr, &p, carry.as_ref(), &d_hidden, &da, &mut grads);
            d_inputs[t * d..(t + 1) * d].copy_from_slice(&g.d_h);
            carry = Some(g.d_state);
        }
        let mut analytic = mh_tensors(&grads);
        analytic.push(("inputs".into(), d_inputs));
        groups.extend(compare(&base, &analytic, eps, &format!("{}.", snake(&structure)), &loss)?);
    }
    Ok(groups)
}

/// Configuration of the tiny backbone used by the gradient check.
pub fn tiny_config(mode: IntegrationMode) -> ModelConfig {
    let mut c = ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_attn_heads: 2,
        ffn_dim: 16,
        vocab_size: 6,
        max_seq_len: 16,
        integration: mode,
        ..Default::default()
    };
    c.stack.slots = 4;
    c.stack.heads = 2;
    c.stack.head_width = 2;
    c.stack.placement = Placement::Named(NamedPlacement::All);
    c
}

fn model_tensors(m: &Model<f64>) -> Tensors {
    let mut t = Vec::new();
    m.params.visit(&mut |name, x| t.push((name.to_string(), x.to_vec())));
    t
}

fn backbone_tiny(eps: f64, seed: u64) -> Result<Vec<GradGroup>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens: Vec<u32> = (0..5).map(|_| rng.random_range(0..6)).collect();
    let mut groups = Vec::new();
    for mode in [IntegrationMode::Temporal, IntegrationMode::Layerwise] {
        let mut proto = Model::<f64>::new(tiny_config(mode), seed)?;
        for sp in proto.params.stacks.iter_mut().flatten() {
            sp.w_up = normals(sp.w_up.len(), 0.5, &mut rng);
            sp.gate = 0.9;
            sp.heads.iter_mut().for_each(|h| h.action = normals(h.action.len(), 1.5, &mut rng));
        }
        for x in proto.params.final_norm.iter_mut() {
            *x = rng.random_range(0.5..1.5);
        }
        let base = model_tensors(&proto);
        let loss = |t: &Tensors| -> Result<f64> {
            let mut m = proto.clone();
            let mut it = t.iter();
            m.params.visit_mut(&mut |_, x| x.copy_from_slice(&it.next().expect("same layout").1));
            let tr = m.forward_traced(&tokens, mode)?;
            let ent: f64 = tr
                .actions
                .iter()
                .flat_map(|r| r.per_token.iter().flatten())
                .map(entropy_term)
                .sum();
            Ok(tr.logits.iter().map(|v| v * v).sum::<f64>() + ent)
        };
        let tr = proto.forward_traced(&tokens, mode)?;
        let d_logits: Vec<f64> = tr.logits.iter().map(|v| 2.0 * v).collect();
        let mut grads = proto.params.zeros_like();
        proto.backward(&tr, &d_logits, ENTROPY_WEIGHT, &mut grads);
        let mut analytic = Vec::new();
        grads.visit(&mut |name, x| analytic.push((name.to_string(), x.to_vec())));
        groups.extend(compare(&base, &analytic, eps, &format!("{}.", snake(&mode)), &loss)?);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn all_scopes_pass() {
        for scope in GradScope::ALL {
            let r = gradcheck(scope, 1e-5, 1e-4, 7).unwrap();
            let worst = r.groups.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
            assert!(r.passed, "{scope:?}: worst group {worst:?}");
        }
    }

    #[test]
    fn zero_tolerance_fails() {
        assert!(!gradcheck(GradScope::StackCore, 1e-5, 0.0, 7).unwrap().passed);
    }
}
