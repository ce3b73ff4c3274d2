//! Forward and backward passes for the fixed score-regression stack.
//!
//! Per sample: hidden stages apply `gelu(W a + b)` (with inverted dropout in
//! train mode), the final block projects onto one logit per template bin,
//! sigmoid squashes each logit, the squashed outputs are normalized to sum
//! to one, and the score is their dot product with the template. The
//! normalization bounds every score by the template range.
//!
//! The squash/normalize head is evaluated in log space so extreme logits
//! cannot underflow the normalizer.

use crate::arch::{GradientSet, LayerBlock, ModelParams, TEMPLATE_BINS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// sigma(-z) = 1 - sigma(z), stable for large |z|.
fn sigmoid_neg(z: f64) -> f64 {
    if z <= 0.0 {
        1.0 / (1.0 + z.exp())
    } else {
        let e = (-z).exp();
        e / (1.0 + e)
    }
}

/// Recorded intermediates of one forward pass, consumed by [`backward`].
pub struct ForwardTrace {
    batch: usize,
    /// Inputs to each layer block: `acts[0]` is the input batch, `acts[j]`
    /// the post-dropout activation of hidden stage `j`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values of each hidden stage.
    pre_acts: Vec<Vec<f64>>,
    /// Inverted-dropout scale per hidden unit (1.0 everywhere in eval mode).
    drop_scales: Option<Vec<Vec<f64>>>,
    /// Normalized head outputs, `batch x TEMPLATE_BINS`.
    probs: Vec<f64>,
    /// `1 - sigmoid(logit)` per head unit, kept for the score gradient.
    sig_comp: Vec<f64>,
    scores: Vec<f64>,
    /// Layer shape fingerprint; backward refuses a trace from another model.
    layer_dims: Vec<(usize, usize)>,
}

impl ForwardTrace {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Run the network on a batch. `dropout_rng` enables train mode: hidden
/// units drop with the descriptor's rate and survivors are rescaled. Pass
/// `None` for deterministic eval-mode outputs.
pub fn forward(
    params: &ModelParams,
    x: &Tensor,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace> {
    let desc = params.descriptor();
    if x.shape().len() != 2 || x.cols() != desc.input_dim {
        return Err(Error::shape(
            "forward input",
            format!("[batch, {}]", desc.input_dim),
            format!("{:?}", x.shape()),
        ));
    }
    let batch = x.rows();
    let layers = params.layers();
    let hidden_stages = layers.len() - 1;
    let rate = desc.dropout_rate;
    let train = dropout_rng.is_some() && rate > 0.0;

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    acts.push(x.data().to_vec());
    let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(hidden_stages);
    let mut drop_scales: Option<Vec<Vec<f64>>> = train.then(Vec::new);

    for (j, block) in layers.iter().take(hidden_stages).enumerate() {
        let z = linear(block, &acts[j], batch);
        let mut a: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
        if train {
            let rng = dropout_rng.as_deref_mut().expect("train mode rng");
            let keep = 1.0 / (1.0 - rate);
            let scales: Vec<f64> = a
                .iter()
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            for (v, &s) in a.iter_mut().zip(&scales) {
                *v *= s;
            }
            drop_scales
                .as_mut()
                .expect("train mode scales")
                .push(scales);
        }
        pre_acts.push(z);
        acts.push(a);
    }

    let logits = linear(&layers[hidden_stages], &acts[hidden_stages], batch);

    let template = &desc.template;
    let mut probs = vec![0.0; batch * TEMPLATE_BINS];
    let mut sig_comp = vec![0.0; batch * TEMPLATE_BINS];
    let mut scores = vec![0.0; batch];
    for b in 0..batch {
        let z = &logits[b * TEMPLATE_BINS..(b + 1) * TEMPLATE_BINS];
        // log sigmoid(z_k) = -softplus(-z_k); normalize in log space.
        let log_s: Vec<f64> = z.iter().map(|&v| -softplus(-v)).collect();
        let m = log_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = log_s.iter().map(|&c| (c - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut score = 0.0;
        for k in 0..TEMPLATE_BINS {
            let p = exps[k] / total;
            probs[b * TEMPLATE_BINS + k] = p;
            sig_comp[b * TEMPLATE_BINS + k] = sigmoid_neg(z[k]);
            score += p * template[k];
        }
        if !score.is_finite() {
            return Err(Error::Numerical(format!("non-finite score for sample {b}")));
        }
        scores[b] = score;
    }

    Ok(ForwardTrace {
        batch,
        acts,
        pre_acts,
        drop_scales,
        probs,
        sig_comp,
        scores,
        layer_dims: layers.iter().map(|b| (b.out_dim(), b.in_dim())).collect(),
    })
}

/// Eval-mode scores only.
pub fn predict(params: &ModelParams, x: &Tensor) -> Result<Vec<f64>> {
    Ok(forward(params, x, None)?.scores)
}

/// Propagate per-sample score gradients back to every layer block.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, dscore: &[f64]) -> Result<GradientSet> {
    let layers = params.layers();
    let dims: Vec<(usize, usize)> = layers.iter().map(|b| (b.out_dim(), b.in_dim())).collect();
    if dims != trace.layer_dims {
        return Err(Error::State(
            "forward trace does not match these parameters".into(),
        ));
    }
    if dscore.len() != trace.batch {
        return Err(Error::State(format!(
            "score gradient length {} does not match traced batch {}",
            dscore.len(),
            trace.batch
        )));
    }
    let batch = trace.batch;
    let hidden_stages = layers.len() - 1;
    let template = &params.descriptor().template;
    let mut grads = GradientSet::zeros_like(params);

    // Score head: d score / d logit_k = p_k * (t_k - score) * (1 - s_k).
    let mut delta = vec![0.0; batch * TEMPLATE_BINS];
    for (b, &g) in dscore.iter().enumerate() {
        let score = trace.scores[b];
        for (k, &t) in template.iter().enumerate() {
            let idx = b * TEMPLATE_BINS + k;
            delta[idx] = g * trace.probs[idx] * (t - score) * trace.sig_comp[idx];
        }
    }

    // Output block, then hidden stages in reverse.
    let mut upstream = accumulate_linear(
        &mut grads.layers[hidden_stages],
        &layers[hidden_stages],
        &trace.acts[hidden_stages],
        &delta,
        batch,
    );
    for j in (0..hidden_stages).rev() {
        let out_dim = layers[j].out_dim();
        let z = &trace.pre_acts[j];
        let mut dz = upstream;
        if let Some(scales) = &trace.drop_scales {
            for (v, &s) in dz.iter_mut().zip(&scales[j]) {
                *v *= s;
            }
        }
        for b in 0..batch {
            for o in 0..out_dim {
                dz[b * out_dim + o] *= gelu_prime(z[b * out_dim + o]);
            }
        }
        upstream = accumulate_linear(&mut grads.layers[j], &layers[j], &trace.acts[j], &dz, batch);
    }
    Ok(grads)
}

/// `z[b,o] = sum_i W[o,i] a[b,i] + bias[o]` over a flattened batch.
fn linear(block: &LayerBlock, input: &[f64], batch: usize) -> Vec<f64> {
    let (out_dim, in_dim) = (block.out_dim(), block.in_dim());
    let w = block.weight.data();
    let bias = block.bias.data();
    let mut z = vec![0.0; batch * out_dim];
    for b in 0..batch {
        let row = &input[b * in_dim..(b + 1) * in_dim];
        let zb = &mut z[b * out_dim..(b + 1) * out_dim];
        for o in 0..out_dim {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for i in 0..in_dim {
                acc += wrow[i] * row[i];
            }
            zb[o] = acc;
        }
    }
    z
}

/// Add this block's weight/bias gradients and return the gradient with
/// respect to the block's input.
fn accumulate_linear(
    grad: &mut LayerBlock,
    block: &LayerBlock,
    input: &[f64],
    delta: &[f64],
    batch: usize,
) -> Vec<f64> {
    let (out_dim, in_dim) = (block.out_dim(), block.in_dim());
    let w = block.weight.data();
    let gw = grad.weight.data_mut();
    let gb = grad.bias.data_mut();
    let mut dinput = vec![0.0; batch * in_dim];
    for b in 0..batch {
        let row = &input[b * in_dim..(b + 1) * in_dim];
        let db = &delta[b * out_dim..(b + 1) * out_dim];
        let drow = &mut dinput[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let d = db[o];
            gb[o] += d;
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                gwrow[i] += d * row[i];
                drow[i] += d * wrow[i];
            }
        }
    }
    dinput
}
