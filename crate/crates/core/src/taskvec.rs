//! Layer-wise task vectors: per-layer weight deltas between a fine-tuned
//! model and the base it branched from, plus the arithmetic on them.

use crate::arch::{bits_eq, LayerBlock, ModelParams};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hashes of the base and fine-tuned checkpoints a delta was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub pre_hash: u64,
    pub ft_hash: u64,
}

/// Per-layer deltas for one task, shape-congruent with its source models.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub task_id: String,
    layers: Vec<LayerBlock>,
    pub provenance: Provenance,
}

impl TaskVector {
    pub fn from_layers(task_id: String, layers: Vec<LayerBlock>, provenance: Provenance) -> Self {
        Self {
            task_id,
            layers,
            provenance,
        }
    }

    pub fn layers(&self) -> &[LayerBlock] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(LayerBlock::param_count).sum()
    }

    pub fn congruent_with(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layer_count()
            && self
                .layers
                .iter()
                .zip(params.layers())
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn same_shape(&self, other: &TaskVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn bit_equal(&self, other: &TaskVector) -> bool {
        self.same_shape(other)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                bits_eq(a.weight.data(), b.weight.data()) && bits_eq(a.bias.data(), b.bias.data())
            })
    }
}

/// Elementwise delta `fine_tuned - base`, layer by layer.
pub fn extract(base: &ModelParams, fine_tuned: &ModelParams, task_id: &str) -> Result<TaskVector> {
    ensure_congruent(base, fine_tuned)?;
    let layers = base
        .layers()
        .iter()
        .zip(fine_tuned.layers())
        .map(|(p, f)| LayerBlock {
            weight: sub(&f.weight, &p.weight),
            bias: sub(&f.bias, &p.bias),
        })
        .collect();
    Ok(TaskVector {
        task_id: task_id.to_string(),
        layers,
        provenance: Provenance {
            pre_hash: checkpoint::params_hash(base),
            ft_hash: checkpoint::params_hash(fine_tuned),
        },
    })
}

/// `base + scale * delta` for every layer. The inverse of [`extract`] at
/// scale 1 for canonicalized checkpoints.
pub fn apply(base: &ModelParams, delta: &TaskVector, scale: f64) -> Result<ModelParams> {
    if !delta.congruent_with(base) {
        return Err(descriptor_mismatch(base, &delta.layers, &delta.task_id));
    }
    let layers = base
        .layers()
        .iter()
        .zip(&delta.layers)
        .map(|(p, d)| LayerBlock {
            weight: add_scaled(&p.weight, &d.weight, scale),
            bias: add_scaled(&p.bias, &d.bias, scale),
        })
        .collect();
    ModelParams::from_layers(base.descriptor().clone(), layers)
}

/// Rewrite `fine_tuned` as the nearest parameter set whose delta against
/// `base` survives an extract/apply round trip bit-for-bit.
///
/// A raw subtract-then-add in floating point can land one ulp away from the
/// original when a weight's total move dwarfs its final magnitude. Replaying
/// `base + (ft - base)` is monotone per element, so iterating it reaches a
/// fixed point (almost always in one pass); from then on reconstruction is
/// exact. The perturbation is at most a few ulps of the moved weight.
pub fn canonicalize(base: &ModelParams, fine_tuned: &ModelParams) -> Result<ModelParams> {
    ensure_congruent(base, fine_tuned)?;
    let mut current = fine_tuned.clone();
    for _ in 0..64 {
        let delta = extract(base, &current, "canonicalize")?;
        let next = apply(base, &delta, 1.0)?;
        if next.bit_equal(&current) {
            return Ok(current);
        }
        current = next;
    }
    Err(Error::Numerical(
        "delta canonicalization did not converge".into(),
    ))
}

/// Concatenate all layer deltas into one row vector, layer order, weights
/// before bias within a block.
pub fn flatten(tv: &TaskVector) -> Tensor {
    let mut data = Vec::with_capacity(tv.total_params());
    for block in &tv.layers {
        data.extend_from_slice(block.weight.data());
        data.extend_from_slice(block.bias.data());
    }
    let n = data.len();
    Tensor::new(vec![1, n], data).expect("deltas are finite")
}

pub fn negate(tv: &TaskVector) -> TaskVector {
    scale(tv, -1.0)
}

pub fn scale(tv: &TaskVector, factor: f64) -> TaskVector {
    let layers = tv
        .layers
        .iter()
        .map(|b| LayerBlock {
            weight: map(&b.weight, |v| v * factor),
            bias: map(&b.bias, |v| v * factor),
        })
        .collect();
    TaskVector {
        task_id: tv.task_id.clone(),
        layers,
        provenance: tv.provenance,
    }
}

pub fn add(a: &TaskVector, b: &TaskVector) -> Result<TaskVector> {
    if !a.same_shape(b) {
        return Err(Error::DescriptorMismatch(format!(
            "task vectors '{}' and '{}' have incongruent layers",
            a.task_id, b.task_id
        )));
    }
    let layers = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| LayerBlock {
            weight: zip(&x.weight, &y.weight, |u, v| u + v),
            bias: zip(&x.bias, &y.bias, |u, v| u + v),
        })
        .collect();
    Ok(TaskVector {
        task_id: format!("{}+{}", a.task_id, b.task_id),
        layers,
        provenance: a.provenance,
    })
}

/// Pairwise cosine similarities of the flattened vectors; symmetric with a
/// unit diagonal. Accumulation stays in f64 throughout.
pub fn cosine_similarity_matrix(tvs: &[TaskVector]) -> Result<Tensor> {
    let n = tvs.len();
    if n == 0 {
        return Err(Error::DegenerateInput("no task vectors given".into()));
    }
    for pair in tvs.windows(2) {
        if !pair[0].same_shape(&pair[1]) {
            return Err(Error::DescriptorMismatch(format!(
                "task vectors '{}' and '{}' have incongruent layers",
                pair[0].task_id, pair[1].task_id
            )));
        }
    }
    let flat: Vec<Vec<f64>> = tvs.iter().map(|tv| flatten(tv).data().to_vec()).collect();
    let norms: Vec<f64> = flat
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "task vector '{}' has zero norm",
                tvs[i].task_id
            )));
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let dot: f64 = flat[i].iter().zip(&flat[j]).map(|(a, b)| a * b).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            out[i * n + j] = c;
            out[j * n + i] = c;
        }
    }
    Tensor::matrix(n, n, out)
}

fn ensure_congruent(base: &ModelParams, other: &ModelParams) -> Result<()> {
    if base.congruent(other) {
        return Ok(());
    }
    let layer = other
        .first_incongruent_layer(base)
        .map(|l| format!("first differing layer {l}"))
        .unwrap_or_else(|| "differing descriptors".to_string());
    Err(Error::DescriptorMismatch(format!(
        "models do not share an architecture ({layer})"
    )))
}

fn descriptor_mismatch(base: &ModelParams, layers: &[LayerBlock], task_id: &str) -> Error {
    let first = base
        .layers()
        .iter()
        .zip(layers)
        .position(|(a, b)| !a.same_shape(b))
        .unwrap_or_else(|| base.layer_count().min(layers.len()));
    Error::DescriptorMismatch(format!(
        "task vector '{task_id}' incongruent with base (first differing layer {first})"
    ))
}

fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x - y)
}

fn add_scaled(a: &Tensor, b: &Tensor, s: f64) -> Tensor {
    zip(a, b, |x, y| x + s * y)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("finite map result")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("finite zip result")
}
