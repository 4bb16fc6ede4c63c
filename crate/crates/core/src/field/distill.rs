//! Fits per-Gaussian features and field weights so the decoded appearance
//! reproduces a source scene's SH coefficients and opacities.
//!
//! The per-Gaussian loss is
//! `w_dc‖h_dc − h̃_dc‖² + w_o(o − õ)² + w_rest‖h_rest − h̃_rest‖²`,
//! averaged over the Gaussians of a batch. Gradients are analytic; updates use
//! Adam, with per-row step counts for the features since a mini-batch only
//! touches some rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::BatchTrace;
use super::{positional_encoding, FieldArch, FieldWeights, Mlp};
use crate::error::{Error, Result};
use crate::model::{logit, sigmoid, Aabb, OmgGaussianSet, SourceGaussianSet, SH_REST};

const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub sh_dc: f64,
    pub opacity: f64,
    pub sh_rest: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sh_dc: 1.0, opacity: 1.0, sh_rest: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub arch: FieldArch,
    pub iterations: usize,
    pub feature_lr: f64,
    pub weight_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gaussians per step; the whole set when it is smaller.
    pub batch_size: usize,
    /// Steps between full-loss evaluations (best-iterate tracking).
    pub checkpoint_interval: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            arch: FieldArch::default(),
            iterations: 5000,
            feature_lr: 1e-2,
            weight_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4096,
            checkpoint_interval: 250,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.feature_lr) || !positive(self.weight_lr) || !positive(self.epsilon) {
            return Err(Error::config("distill: learning rates and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("distill: Adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(Error::config("distill: batch_size and checkpoint_interval must be ≥ 1"));
        }
        let w = self.loss_weights;
        if [w.sh_dc, w.opacity, w.sh_rest].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("distill: loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Trainable parameters in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillState {
    pub weights: FieldWeights,
    pub static_features: Vec<[f64; 3]>,
    pub view_features: Vec<[f64; 3]>,
}

impl DistillState {
    /// Field weights first, then `T` row-major, then `V` row-major.
    pub fn param_count(&self) -> usize {
        self.weights.param_count() + 6 * self.static_features.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.flatten();
        p.extend(self.static_features.iter().flatten());
        p.extend(self.view_features.iter().flatten());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let nw = self.weights.param_count();
        self.weights.load_flat(&params[..nw]);
        let n = self.static_features.len();
        for i in 0..n {
            for c in 0..3 {
                self.static_features[i][c] = params[nw + 3 * i + c];
                self.view_features[i][c] = params[nw + 3 * n + 3 * i + c];
            }
        }
    }

    pub fn into_set(self, source: &SourceGaussianSet) -> OmgGaussianSet {
        OmgGaussianSet {
            positions: source.positions.clone(),
            log_scales: source.log_scales.clone(),
            rotations: source.rotations.clone(),
            static_features: self.static_features.iter().map(|t| t.map(|v| v as f32)).collect(),
            view_features: self.view_features.iter().map(|t| t.map(|v| v as f32)).collect(),
            field: self.weights,
        }
    }
}

/// The regression problem for one source scene: cached encodings and targets.
pub struct DistillProblem<'a> {
    source: &'a SourceGaussianSet,
    arch: FieldArch,
    aabb: Aabb,
    encodings: Vec<f64>,
    loss_weights: LossWeights,
}

struct Gradient {
    weights: Vec<f64>,
    /// dT then dV, one entry per batch row.
    features: Vec<[f64; 6]>,
}

impl<'a> DistillProblem<'a> {
    pub fn new(source: &'a SourceGaussianSet, arch: FieldArch, loss_weights: LossWeights) -> Self {
        let aabb = Aabb::from_points(&source.positions);
        let mut encodings = Vec::with_capacity(source.len() * arch.encoding_dim());
        for p in &source.positions {
            encodings.extend(positional_encoding(aabb.normalize(*p), arch.pe_frequencies));
        }
        Self { source, arch, aabb, encodings, loss_weights }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// `T` from the source DC coefficients, `V = 0`, random MLPs whose output
    /// biases start at the target means.
    pub fn initial_state(&self, seed: u64) -> DistillState {
        let mut weights = FieldWeights::random(self.arch, self.aabb, seed);
        let n = self.len().max(1) as f64;
        let src = self.source;
        let dc_bias = &mut weights.static_color.layers.last_mut().unwrap().bias;
        for c in 0..3 {
            dc_bias[c] = src.sh_dc.iter().map(|h| h[c] as f64).sum::<f64>() / n;
        }
        let mean_opacity = src.opacities.iter().sum::<f64>() / n;
        weights.opacity.layers.last_mut().unwrap().bias[0] =
            if src.is_empty() { 0.0 } else { logit(mean_opacity) };
        let rest_bias = &mut weights.view.layers.last_mut().unwrap().bias;
        for k in 0..SH_REST {
            rest_bias[k] = src.sh_rest.iter().map(|h| h[k] as f64).sum::<f64>() / n;
        }
        DistillState {
            weights,
            static_features: src.sh_dc.iter().map(|h| h.map(|v| v as f64)).collect(),
            view_features: vec![[0.0; 3]; src.len()],
        }
    }

    /// Sum of per-Gaussian losses over `rows` and, optionally, the gradient of
    /// `scale · sum`.
    fn evaluate(&self, state: &DistillState, rows: &[usize], grad_scale: Option<f64>) -> (f64, Option<Gradient>) {
        let b = rows.len();
        let enc_dim = self.arch.encoding_dim();
        let fd = self.arch.space_dim;
        let w = &state.weights;

        let mut enc = Vec::with_capacity(b * enc_dim);
        for &r in rows {
            enc.extend_from_slice(&self.encodings[r * enc_dim..(r + 1) * enc_dim]);
        }
        let space = w.space.forward_batch(enc, b);
        let feat = space.output();
        let mut in_t = Vec::with_capacity(b * (3 + fd));
        let mut in_v = Vec::with_capacity(b * (3 + fd));
        for (i, &r) in rows.iter().enumerate() {
            in_t.extend_from_slice(&state.static_features[r]);
            in_t.extend_from_slice(&feat[i * fd..(i + 1) * fd]);
            in_v.extend_from_slice(&state.view_features[r]);
            in_v.extend_from_slice(&feat[i * fd..(i + 1) * fd]);
        }
        let t_trace = w.static_color.forward_batch(in_t, b);
        let o_trace = w.opacity.forward_batch(t_trace.acts[0].clone(), b);
        let v_trace = w.view.forward_batch(in_v, b);

        let lw = self.loss_weights;
        let src = self.source;
        let mut loss = 0.0;
        let mut d_dc = Vec::new();
        let mut d_op = Vec::new();
        let mut d_rest = Vec::new();
        if grad_scale.is_some() {
            d_dc.reserve(b * 3);
            d_op.reserve(b);
            d_rest.reserve(b * SH_REST);
        }
        let s = grad_scale.unwrap_or(0.0);
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..3 {
                let e = t_trace.output()[i * 3 + c] - src.sh_dc[r][c] as f64;
                loss += lw.sh_dc * e * e;
                if grad_scale.is_some() {
                    d_dc.push(2.0 * lw.sh_dc * e * s);
                }
            }
            let o = sigmoid(o_trace.output()[i]);
            let e = o - src.opacities[r];
            loss += lw.opacity * e * e;
            if grad_scale.is_some() {
                d_op.push(2.0 * lw.opacity * e * o * (1.0 - o) * s);
            }
            for k in 0..SH_REST {
                let e = v_trace.output()[i * SH_REST + k] - src.sh_rest[r][k] as f64;
                loss += lw.sh_rest * e * e;
                if grad_scale.is_some() {
                    d_rest.push(2.0 * lw.sh_rest * e * s);
                }
            }
        }
        if grad_scale.is_none() {
            return (loss, None);
        }

        let mut grad = vec![0.0; w.param_count()];
        let sizes = [w.space.param_count(), w.static_color.param_count(), w.opacity.param_count()];
        let (g_space, rest) = grad.split_at_mut(sizes[0]);
        let (g_t, rest) = rest.split_at_mut(sizes[1]);
        let (g_o, g_v) = rest.split_at_mut(sizes[2]);

        let back = |mlp: &Mlp, trace: &BatchTrace, d: Vec<f64>, g: &mut [f64]| mlp.backward_batch(trace, d, g);
        let din_t = back(&w.static_color, &t_trace, d_dc, g_t);
        let din_o = back(&w.opacity, &o_trace, d_op, g_o);
        let din_v = back(&w.view, &v_trace, d_rest, g_v);

        let width = 3 + fd;
        let mut d_feat = vec![0.0; b * fd];
        let mut features = Vec::with_capacity(b);
        for i in 0..b {
            let row = i * width;
            let mut g = [0.0; 6];
            for c in 0..3 {
                g[c] = din_t[row + c] + din_o[row + c];
                g[3 + c] = din_v[row + c];
            }
            features.push(g);
            for k in 0..fd {
                d_feat[i * fd + k] = din_t[row + 3 + k] + din_o[row + 3 + k] + din_v[row + 3 + k];
            }
        }
        w.space.backward_batch(&space, d_feat, g_space);
        (loss, Some(Gradient { weights: grad, features }))
    }

    /// Mean loss over every Gaussian.
    pub fn loss(&self, state: &DistillState) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let all: Vec<usize> = (0..self.len()).collect();
        let total: f64 = all.chunks(EVAL_CHUNK).map(|c| self.evaluate(state, c, None).0).sum();
        total / self.len() as f64
    }

    /// Mean loss over every Gaussian and its gradient in [`DistillState::params`] order.
    pub fn full_gradient(&self, state: &DistillState) -> (f64, Vec<f64>) {
        let n = self.len();
        let nw = state.weights.param_count();
        let mut grad = vec![0.0; nw + 6 * n];
        if n == 0 {
            return (0.0, grad);
        }
        let all: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for chunk in all.chunks(EVAL_CHUNK) {
            let (l, g) = self.evaluate(state, chunk, Some(1.0 / n as f64));
            let g = g.unwrap();
            total += l;
            grad[..nw].iter_mut().zip(&g.weights).for_each(|(a, b)| *a += b);
            for (&r, f) in chunk.iter().zip(&g.features) {
                for c in 0..3 {
                    grad[nw + 3 * r + c] = f[c];
                    grad[nw + 3 * n + 3 * r + c] = f[3 + c];
                }
            }
        }
        (total / n as f64, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCheckpoint {
    pub iteration: usize,
    pub loss: f64,
    /// Lowest loss seen at any checkpoint so far.
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct DistillResult {
    pub set: OmgGaussianSet,
    pub trace: Vec<LossCheckpoint>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn step(&self, lr: f64, t: u32, param: &mut f64, grad: f64, m: &mut f64, v: &mut f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
        *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
        let m_hat = *m / (1.0 - self.beta1.powi(t as i32));
        let v_hat = *v / (1.0 - self.beta2.powi(t as i32));
        *param -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
    }
}

/// Distills `source` into features plus field weights and returns the best
/// checkpoint.
pub fn distill_fit(source: &SourceGaussianSet, config: &DistillConfig) -> Result<DistillResult> {
    config.validate()?;
    source.validate()?;
    let problem = DistillProblem::new(source, config.arch, config.loss_weights);
    let mut state = problem.initial_state(config.seed);
    let initial_loss = problem.loss(&state);
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { iteration: 0, loss: initial_loss });
    }
    let mut trace = vec![LossCheckpoint { iteration: 0, loss: initial_loss, best: initial_loss }];
    let n = source.len();
    if n == 0 || config.iterations == 0 {
        return Ok(DistillResult { set: state.into_set(source), trace, initial_loss, final_loss: initial_loss });
    }

    let adam = Adam { beta1: config.beta1, beta2: config.beta2, epsilon: config.epsilon };
    let mut weights = state.weights.flatten();
    let mut m_w = vec![0.0; weights.len()];
    let mut v_w = vec![0.0; weights.len()];
    let mut m_f = vec![[0.0; 6]; n];
    let mut v_f = vec![[0.0; 6]; n];
    let mut t_f = vec![0u32; n];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d157);
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut best_state = state.clone();
    let mut best_loss = initial_loss;

    for it in 1..=config.iterations {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;

        let (loss, grad) = problem.evaluate(&state, rows, Some(1.0 / batch as f64));
        let grad = grad.expect("gradient requested");
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss: loss / batch as f64 });
        }
        for (k, g) in grad.weights.iter().enumerate() {
            adam.step(config.weight_lr, it as u32, &mut weights[k], *g, &mut m_w[k], &mut v_w[k]);
        }
        state.weights.load_flat(&weights);
        for (&r, g) in rows.iter().zip(&grad.features) {
            t_f[r] += 1;
            for c in 0..6 {
                let p = if c < 3 { &mut state.static_features[r][c] } else { &mut state.view_features[r][c - 3] };
                adam.step(config.feature_lr, t_f[r], p, g[c], &mut m_f[r][c], &mut v_f[r][c]);
            }
        }

        if it % config.checkpoint_interval == 0 || it == config.iterations {
            let full = problem.loss(&state);
            if !full.is_finite() {
                return Err(Error::Diverged { iteration: it, loss: full });
            }
            if full < best_loss {
                best_loss = full;
                best_state = state.clone();
            }
            trace.push(LossCheckpoint { iteration: it, loss: full, best: best_loss });
        }
    }
    Ok(DistillResult { set: best_state.into_set(source), trace, initial_loss, final_loss: best_loss })
}
