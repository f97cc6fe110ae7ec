//! Stacked GRU network: forward pass, training-time forward with caches,
//! and truncated backpropagation through time.
//!
//! Cell equations per step:
//! ```text
//! z = sigmoid(Wz·x + Uz·h + bz)
//! r = sigmoid(Wr·x + Ur·h + br)
//! c = tanh(Wh·x + Uh·(r ⊙ h) + bh)
//! h' = (1 - z) ⊙ h + z ⊙ c
//! ```
//! Stacked layers feed `h'` upward; the final layer's last hidden state
//! drives a single sigmoid output unit. Dropout applies to non-final layer
//! outputs during training only, with a fresh mask per time step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::sigmoid;

/// Parameters of one GRU layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub b_update: Vec<f64>,
    pub w_reset: Matrix,
    pub u_reset: Matrix,
    pub b_reset: Vec<f64>,
    pub w_cand: Matrix,
    pub u_cand: Matrix,
    pub b_cand: Vec<f64>,
}

impl GruLayer {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruLayer {
            w_update: Matrix::zeros(hidden, input_dim),
            u_update: Matrix::zeros(hidden, hidden),
            b_update: vec![0.0; hidden],
            w_reset: Matrix::zeros(hidden, input_dim),
            u_reset: Matrix::zeros(hidden, hidden),
            b_reset: vec![0.0; hidden],
            w_cand: Matrix::zeros(hidden, input_dim),
            u_cand: Matrix::zeros(hidden, hidden),
            b_cand: vec![0.0; hidden],
        }
    }

    fn hidden(&self) -> usize {
        self.b_update.len()
    }

    fn input_dim(&self) -> usize {
        self.w_update.cols
    }
}

/// Full network: stacked GRU layers plus the sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruNetwork {
    pub layers: Vec<GruLayer>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl GruNetwork {
    /// All-zero network (useful as a deterministic starting point).
    pub fn zeros(input_dim: usize, hidden: usize, depth: usize) -> Self {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let in_dim = if l == 0 { input_dim } else { hidden };
            layers.push(GruLayer::zeros(in_dim, hidden));
        }
        GruNetwork {
            layers,
            output_weights: vec![0.0; hidden],
            output_bias: 0.0,
        }
    }

    /// Random initialization, uniform in ±sqrt(6/(fan_in+fan_out)) per matrix.
    pub fn init(input_dim: usize, hidden: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(input_dim, hidden, depth);
        for layer in &mut net.layers {
            for m in [
                &mut layer.w_update,
                &mut layer.u_update,
                &mut layer.w_reset,
                &mut layer.u_reset,
                &mut layer.w_cand,
                &mut layer.u_cand,
            ] {
                let bound = (6.0 / (m.rows + m.cols) as f64).sqrt();
                for w in &mut m.data {
                    *w = rng.gen_range(-bound..bound);
                }
            }
        }
        let bound = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut net.output_weights {
            *w = rng.gen_range(-bound..bound);
        }
        net
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Inference forward pass over one window (oldest row first).
    /// Rows must match the input dimension.
    pub fn forward(&self, window: &[&[f64]]) -> f64 {
        let hidden = self.hidden();
        let mut states: Vec<Vec<f64>> = vec![vec![0.0; hidden]; self.depth()];
        let mut gates = GateBuffers::new(hidden);

        for row in window {
            debug_assert_eq!(row.len(), self.input_dim());
            let mut input: Vec<f64> = row.to_vec();
            for (l, layer) in self.layers.iter().enumerate() {
                gates.run_cell(layer, &input, &states[l]);
                states[l].copy_from_slice(&gates.h_next);
                input.clear();
                input.extend_from_slice(&states[l]);
            }
        }

        let top = &states[self.depth() - 1];
        let pre = self
            .output_weights
            .iter()
            .zip(top)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + self.output_bias;
        clamp_open_unit(sigmoid(pre))
    }

    /// Training forward pass: keeps per-step caches for backpropagation and
    /// applies inverted dropout between layers when `dropout > 0`.
    pub fn forward_train(
        &self,
        window: &[&[f64]],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> ForwardCache {
        let hidden = self.hidden();
        let depth = self.depth();
        let mut states: Vec<Vec<f64>> = vec![vec![0.0; hidden]; depth];
        let mut gates = GateBuffers::new(hidden);
        let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(window.len());
        let keep = 1.0 - dropout;

        for row in window {
            let mut per_layer = Vec::with_capacity(depth);
            let mut input: Vec<f64> = row.to_vec();
            for (l, layer) in self.layers.iter().enumerate() {
                gates.run_cell(layer, &input, &states[l]);
                let h_prev = std::mem::replace(&mut states[l], gates.h_next.clone());

                // dropout mask feeding the next layer up (training only)
                let mut mask = Vec::new();
                let next_input = if l + 1 < depth {
                    if dropout > 0.0 {
                        mask = (0..hidden)
                            .map(|_| {
                                if rng.gen::<f64>() < dropout {
                                    0.0
                                } else {
                                    1.0 / keep
                                }
                            })
                            .collect();
                        states[l]
                            .iter()
                            .zip(&mask)
                            .map(|(h, m)| h * m)
                            .collect()
                    } else {
                        states[l].clone()
                    }
                } else {
                    Vec::new()
                };

                per_layer.push(StepCache {
                    input,
                    h_prev,
                    update: gates.update.clone(),
                    reset: gates.reset.clone(),
                    cand: gates.cand.clone(),
                    mask,
                });
                input = if l + 1 < depth {
                    next_input
                } else {
                    Vec::new()
                };
            }
            steps.push(per_layer);
        }

        let top = &states[depth - 1];
        let pre = self
            .output_weights
            .iter()
            .zip(top)
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + self.output_bias;
        ForwardCache {
            steps,
            final_hidden: top.clone(),
            score: clamp_open_unit(sigmoid(pre)),
        }
    }

    /// Backpropagate `d_score = dL/d(score)` for one sample, accumulating
    /// parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, d_score: f64, grads: &mut GruGradients) {
        let hidden = self.hidden();
        let depth = self.depth();
        let steps = cache.steps.len();
        let s = cache.score;
        let d_pre = d_score * s * (1.0 - s);

        for (gw, h) in grads.output_weights.iter_mut().zip(&cache.final_hidden) {
            *gw += d_pre * h;
        }
        grads.output_bias += d_pre;

        // gradient carried to each layer's hidden state from the future
        let mut carry: Vec<Vec<f64>> = vec![vec![0.0; hidden]; depth];
        let mut da_update = vec![0.0; hidden];
        let mut da_reset = vec![0.0; hidden];
        let mut da_cand = vec![0.0; hidden];
        let mut d_rh = vec![0.0; hidden];
        let mut rh = vec![0.0; hidden];

        for t in (0..steps).rev() {
            // gradient w.r.t. the input of the layer above at this step
            let mut dx_above: Option<Vec<f64>> = None;
            for l in (0..depth).rev() {
                let step = &cache.steps[t][l];
                let layer = &self.layers[l];
                let mut dh = std::mem::take(&mut carry[l]);
                if t == steps - 1 && l == depth - 1 {
                    for (d, w) in dh.iter_mut().zip(&self.output_weights) {
                        *d += d_pre * w;
                    }
                }
                if let Some(dx) = &dx_above {
                    if step.mask.is_empty() {
                        for (d, g) in dh.iter_mut().zip(dx) {
                            *d += g;
                        }
                    } else {
                        for ((d, g), m) in dh.iter_mut().zip(dx).zip(&step.mask) {
                            *d += g * m;
                        }
                    }
                }

                for i in 0..hidden {
                    let z = step.update[i];
                    let c = step.cand[i];
                    let hp = step.h_prev[i];
                    da_update[i] = dh[i] * (c - hp) * z * (1.0 - z);
                    da_cand[i] = dh[i] * z * (1.0 - c * c);
                    rh[i] = step.reset[i] * hp;
                }

                d_rh.iter_mut().for_each(|v| *v = 0.0);
                layer.u_cand.matvec_transpose_add(&da_cand, &mut d_rh);
                for i in 0..hidden {
                    let r = step.reset[i];
                    da_reset[i] = d_rh[i] * step.h_prev[i] * r * (1.0 - r);
                }

                let g = &mut grads.layers[l];
                g.w_update.add_outer(&da_update, &step.input);
                g.u_update.add_outer(&da_update, &step.h_prev);
                g.w_reset.add_outer(&da_reset, &step.input);
                g.u_reset.add_outer(&da_reset, &step.h_prev);
                g.w_cand.add_outer(&da_cand, &step.input);
                g.u_cand.add_outer(&da_cand, &rh);
                for i in 0..hidden {
                    g.b_update[i] += da_update[i];
                    g.b_reset[i] += da_reset[i];
                    g.b_cand[i] += da_cand[i];
                }

                // to h_{t-1}: (1-z)⊙dh + Uzᵀ·daz + Urᵀ·dar + r⊙(Uhᵀ·dac)
                let mut dh_prev: Vec<f64> = dh
                    .iter()
                    .zip(&step.update)
                    .map(|(d, z)| d * (1.0 - z))
                    .collect();
                layer.u_update.matvec_transpose_add(&da_update, &mut dh_prev);
                layer.u_reset.matvec_transpose_add(&da_reset, &mut dh_prev);
                for i in 0..hidden {
                    dh_prev[i] += d_rh[i] * step.reset[i];
                }
                carry[l] = dh_prev;

                if l > 0 {
                    let mut dx = vec![0.0; step.input.len()];
                    layer.w_update.matvec_transpose_add(&da_update, &mut dx);
                    layer.w_reset.matvec_transpose_add(&da_reset, &mut dx);
                    layer.w_cand.matvec_transpose_add(&da_cand, &mut dx);
                    dx_above = Some(dx);
                } else {
                    dx_above = None;
                }
            }
        }
    }

    /// Copy every parameter into one flat vector. The layout is fixed:
    /// per layer (Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh), then output weights
    /// and bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w_update.data);
            out.extend_from_slice(&layer.u_update.data);
            out.extend_from_slice(&layer.b_update);
            out.extend_from_slice(&layer.w_reset.data);
            out.extend_from_slice(&layer.u_reset.data);
            out.extend_from_slice(&layer.b_reset);
            out.extend_from_slice(&layer.w_cand.data);
            out.extend_from_slice(&layer.u_cand.data);
            out.extend_from_slice(&layer.b_cand);
        }
        out.extend_from_slice(&self.output_weights);
        out.push(self.output_bias);
        out
    }

    /// Inverse of [`flatten`]. Panics if the length does not match.
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        let mut take = |n: usize| {
            let slice = &flat[cursor..cursor + n];
            cursor += n;
            slice
        };
        for layer in &mut self.layers {
            for m in [&mut layer.w_update, &mut layer.u_update] {
                let n = m.data.len();
                m.data.copy_from_slice(take(n));
            }
            let n = layer.b_update.len();
            layer.b_update.copy_from_slice(take(n));
            for m in [&mut layer.w_reset, &mut layer.u_reset] {
                let n = m.data.len();
                m.data.copy_from_slice(take(n));
            }
            layer.b_reset.copy_from_slice(take(n));
            for m in [&mut layer.w_cand, &mut layer.u_cand] {
                let n = m.data.len();
                m.data.copy_from_slice(take(n));
            }
            layer.b_cand.copy_from_slice(take(n));
        }
        let n = self.output_weights.len();
        self.output_weights.copy_from_slice(take(n));
        self.output_bias = take(1)[0];
        assert_eq!(cursor, flat.len(), "flat parameter length mismatch");
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for layer in &self.layers {
            n += 3 * (layer.w_update.data.len() + layer.u_update.data.len() + layer.hidden());
        }
        n + self.output_weights.len() + 1
    }
}

/// Score output is kept strictly inside (0, 1) so a threshold of exactly 1
/// can never fire.
fn clamp_open_unit(x: f64) -> f64 {
    x.clamp(1e-12, 1.0 - 1e-12)
}

/// Scratch buffers for one cell evaluation.
struct GateBuffers {
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    h_next: Vec<f64>,
    tmp: Vec<f64>,
    rh: Vec<f64>,
}

impl GateBuffers {
    fn new(hidden: usize) -> Self {
        GateBuffers {
            update: vec![0.0; hidden],
            reset: vec![0.0; hidden],
            cand: vec![0.0; hidden],
            h_next: vec![0.0; hidden],
            tmp: vec![0.0; hidden],
            rh: vec![0.0; hidden],
        }
    }

    fn run_cell(&mut self, layer: &GruLayer, x: &[f64], h: &[f64]) {
        let hidden = h.len();

        layer.w_update.matvec_into(x, &mut self.update);
        layer.u_update.matvec_into(h, &mut self.tmp);
        for i in 0..hidden {
            self.update[i] = sigmoid(self.update[i] + self.tmp[i] + layer.b_update[i]);
        }

        layer.w_reset.matvec_into(x, &mut self.reset);
        layer.u_reset.matvec_into(h, &mut self.tmp);
        for i in 0..hidden {
            self.reset[i] = sigmoid(self.reset[i] + self.tmp[i] + layer.b_reset[i]);
        }

        for i in 0..hidden {
            self.rh[i] = self.reset[i] * h[i];
        }
        layer.w_cand.matvec_into(x, &mut self.cand);
        layer.u_cand.matvec_into(&self.rh, &mut self.tmp);
        for i in 0..hidden {
            self.cand[i] = (self.cand[i] + self.tmp[i] + layer.b_cand[i]).tanh();
        }

        for i in 0..hidden {
            self.h_next[i] = (1.0 - self.update[i]) * h[i] + self.update[i] * self.cand[i];
        }
    }
}

/// Per-(step, layer) values needed by the backward pass.
pub struct StepCache {
    /// Input actually fed to the layer (post-dropout for stacked layers).
    input: Vec<f64>,
    h_prev: Vec<f64>,
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    /// Inverted-dropout multipliers applied to this layer's output, empty
    /// when no dropout was applied.
    mask: Vec<f64>,
}

pub struct ForwardCache {
    steps: Vec<Vec<StepCache>>,
    final_hidden: Vec<f64>,
    pub score: f64,
}

/// Parameter gradients, same shapes as [`GruNetwork`].
pub struct GruGradients {
    pub layers: Vec<GruLayer>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl GruGradients {
    pub fn zeros_like(net: &GruNetwork) -> Self {
        GruGradients {
            layers: net
                .layers
                .iter()
                .map(|l| GruLayer::zeros(l.input_dim(), l.hidden()))
                .collect(),
            output_weights: vec![0.0; net.output_weights.len()],
            output_bias: 0.0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let view = GruNetwork {
            layers: self.layers.clone(),
            output_weights: self.output_weights.clone(),
            output_bias: self.output_bias,
        };
        view.flatten()
    }
}
