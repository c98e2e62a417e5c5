use crate::model::ModelParams;

/// Decoupled-weight-decay Adam over every model tensor. Norm gains and
/// stack gates are not decayed.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

fn decays(name: &str) -> bool {
    !(name.ends_with("norm") || name.ends_with("gate"))
}

impl AdamW {
    pub fn new(params: &ModelParams<f32>, weight_decay: f64) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, x| m.push(vec![0.0; x.len()]));
        let v = m.clone();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m,
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let mut flat = Vec::new();
        grads.visit(&mut |_, g| flat.push(g.to_vec()));
        let (ms, vs) = (&mut self.m, &mut self.v);
        let (eps, wd) = (self.eps, self.weight_decay);
        let mut k = 0;
        params.visit_mut(&mut |name, p| {
            let g = &flat[k];
            let (m, v) = (&mut ms[k], &mut vs[k]);
            let decay = if decays(name) { (lr * wd) as f32 } else { 0.0 };
            for i in 0..p.len() {
                let gi = g[i] as f64;
                m[i] = (b1 * m[i] as f64 + (1.0 - b1) * gi) as f32;
                v[i] = (b2 * v[i] as f64 + (1.0 - b2) * gi * gi) as f32;
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                p[i] -= decay * p[i];
                p[i] -= (lr * mh / (vh.sqrt() + eps)) as f32;
            }
            k += 1;
        });
    }
}

/// Linear warm-up to `peak` over `warmup` steps, then cosine decay to
/// `peak * final_ratio` at `total`.
pub fn learning_rate(step: usize, total: usize, warmup: usize, peak: f64, final_ratio: f64) -> f64 {
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    let floor = peak * final_ratio;
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales `grads` in place so that their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams<f32>, max_norm: f64) -> f64 {
    let norm = grads.sum_of_squares().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.visit_mut(&mut |_, g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}
