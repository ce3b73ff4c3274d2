//! Coefficient-weighted merging of task vectors and coefficient-only
//! training against a user's support set.
//!
//! A personalized model is `base + sum_i alpha[i][l] * delta_i[l]` per layer.
//! Only the `n x L` coefficients train; the base and every task vector stay
//! frozen. Coefficients start from a temperature softmax over the zero-shot
//! rank correlation of each source model on the support set, so tasks that
//! already explain the user's ordering start with more weight.

use crate::arch::ModelParams;
use crate::error::{Error, Result};
use crate::loss::{mse_loss, rank_loss, LossKind, PairBatch};
use crate::metrics::srocc;
use crate::net;
use crate::optim::{AdamW, CosineSchedule};
use crate::rng;
use crate::sample::SampleSet;
use crate::taskvec::{apply, TaskVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Softmax temperature for coefficient initialization. The limits are
/// handled analytically instead of through huge or tiny floats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    /// Limit of infinite temperature: every task weighted equally.
    Uniform,
    /// Limit of zero temperature: all weight on the argmax task
    /// (lowest index wins ties).
    BestFit,
}

/// The `n x L` merge coefficients, row-major by task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientMatrix {
    task_ids: Vec<String>,
    layer_count: usize,
    values: Vec<f64>,
}

impl<'de> serde::Deserialize<'de> for CoefficientMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw {
            task_ids: Vec<String>,
            layer_count: usize,
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        CoefficientMatrix::from_values(raw.task_ids, raw.layer_count, raw.values)
            .map_err(serde::de::Error::custom)
    }
}

impl CoefficientMatrix {
    pub fn from_values(
        task_ids: Vec<String>,
        layer_count: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if task_ids.is_empty() || layer_count == 0 {
            return Err(Error::Config(
                "coefficient matrix needs tasks and layers".into(),
            ));
        }
        if values.len() != task_ids.len() * layer_count {
            return Err(Error::shape(
                "CoefficientMatrix",
                task_ids.len() * layer_count,
                values.len(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        for (i, id) in task_ids.iter().enumerate() {
            if task_ids[..i].contains(id) {
                return Err(Error::Config(format!("duplicate task id '{id}'")));
            }
        }
        Ok(Self {
            task_ids,
            layer_count,
            values,
        })
    }

    pub fn task_count(&self) -> usize {
        self.task_ids.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, task: usize, layer: usize) -> f64 {
        self.values[task * self.layer_count + layer]
    }

    /// True when every row holds one repeated value.
    pub fn is_layer_constant(&self) -> bool {
        self.values
            .chunks(self.layer_count)
            .all(|row| row.iter().all(|v| v.to_bits() == row[0].to_bits()))
    }

    /// Repeat each row out to `layer_count` columns. Used to turn a shared
    /// per-task coefficient into a full merge matrix.
    pub fn broadcast(&self, layer_count: usize) -> CoefficientMatrix {
        let mut values = Vec::with_capacity(self.task_count() * layer_count);
        for row in self.values.chunks(self.layer_count) {
            // Broadcasting only makes sense from a single column.
            let v = row[0];
            values.extend(std::iter::repeat_n(v, layer_count));
        }
        CoefficientMatrix {
            task_ids: self.task_ids.clone(),
            layer_count,
            values,
        }
    }

    /// Tab-separated dump: one row per task, one column per layer.
    pub fn to_text(&self) -> String {
        let mut out = String::from("task_id");
        for l in 0..self.layer_count {
            out.push_str(&format!("\tlayer{l}"));
        }
        out.push('\n');
        for (id, row) in self
            .task_ids
            .iter()
            .zip(self.values.chunks(self.layer_count))
        {
            out.push_str(id);
            for v in row {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `base + sum_i coeffs[i][l] * tvs[i][l]` for every layer `l`. Inputs are
/// untouched; task order must match the coefficient rows.
pub fn merge(
    base: &ModelParams,
    tvs: &[TaskVector],
    coeffs: &CoefficientMatrix,
) -> Result<ModelParams> {
    if tvs.len() != coeffs.task_count() {
        return Err(Error::shape("merge tasks", coeffs.task_count(), tvs.len()));
    }
    if coeffs.layer_count() != base.layer_count() {
        return Err(Error::shape(
            "merge layers",
            base.layer_count(),
            coeffs.layer_count(),
        ));
    }
    for (i, tv) in tvs.iter().enumerate() {
        if !tv.congruent_with(base) {
            return Err(Error::DescriptorMismatch(format!(
                "task vector '{}' incongruent with base",
                tv.task_id
            )));
        }
        if tv.task_id != coeffs.task_ids()[i] {
            return Err(Error::Config(format!(
                "task order mismatch: coefficients row {i} is '{}' but task vector is '{}'",
                coeffs.task_ids()[i],
                tv.task_id
            )));
        }
    }
    let mut out = base.clone();
    for l in 0..base.layer_count() {
        let block = &mut out.layers_mut()[l];
        for (i, tv) in tvs.iter().enumerate() {
            let alpha = coeffs.get(i, l);
            let d = &tv.layers()[l];
            for (w, dv) in block.weight.data_mut().iter_mut().zip(d.weight.data()) {
                *w += alpha * dv;
            }
            for (b, dv) in block.bias.data_mut().iter_mut().zip(d.bias.data()) {
                *b += alpha * dv;
            }
        }
    }
    Ok(out)
}

/// Rank correlation of each model's eval-mode predictions against the
/// support scores. A model that predicts a constant contributes 0 (the
/// degenerate-metric convention); constant ground truth is an error.
pub fn zero_shot_srocc_profile(support: &SampleSet, models: &[ModelParams]) -> Result<Vec<f64>> {
    if support.len() < 2 {
        return Err(Error::shape(
            "zero-shot profile",
            "at least 2 samples",
            support.len(),
        ));
    }
    if !support.has_distinct_scores() {
        return Err(Error::DegenerateInput(
            "support scores are all tied; rank correlation is undefined".into(),
        ));
    }
    models
        .iter()
        .map(|m| {
            let preds = net::predict(m, support.features())?;
            Ok(srocc(support.scores(), &preds)?.value)
        })
        .collect()
}

/// Temperature softmax over the profile, repeated across all layers. Rows
/// sum to one per layer.
pub fn adaptive_init(
    task_ids: &[String],
    profile: &[f64],
    temperature: Temperature,
    layer_count: usize,
) -> Result<CoefficientMatrix> {
    if task_ids.is_empty() || task_ids.len() != profile.len() {
        return Err(Error::shape("adaptive_init", task_ids.len(), profile.len()));
    }
    if !profile.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite profile entry".into()));
    }
    let n = profile.len();
    let row: Vec<f64> = match temperature {
        Temperature::Uniform => vec![1.0 / n as f64; n],
        Temperature::BestFit => {
            let mut best = 0;
            for (i, &v) in profile.iter().enumerate() {
                if v > profile[best] {
                    best = i;
                }
            }
            let mut row = vec![0.0; n];
            row[best] = 1.0;
            row
        }
        Temperature::Finite(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "temperature must be positive, got {t}"
                )));
            }
            softmax(&profile.iter().map(|&v| v / t).collect::<Vec<_>>())
        }
    };
    let mut values = Vec::with_capacity(n * layer_count);
    for &v in &row {
        values.extend(std::iter::repeat_n(v, layer_count));
    }
    CoefficientMatrix::from_values(task_ids.to_vec(), layer_count, values)
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Personalization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationConfig {
    pub temperature: Temperature,
    pub start_lr: f64,
    pub end_lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub loss_kind: LossKind,
    /// Support-set size the harness draws per trial.
    pub shots: usize,
}

impl Default for PersonalizationConfig {
    fn default() -> Self {
        Self {
            temperature: Temperature::Finite(1.0),
            start_lr: 1.0e-2,
            end_lr: 1.0e-3,
            batch_size: 32,
            steps: 500,
            loss_kind: LossKind::Rank,
            shots: 10,
        }
    }
}

impl PersonalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.end_lr > 0.0 && self.end_lr <= self.start_lr) {
            return Err(Error::Config("need 0 < end_lr <= start_lr".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.shots < 2 {
            return Err(Error::Config("shots must be at least 2".into()));
        }
        if let Temperature::Finite(t) = self.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "temperature must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step training record.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainingLog {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
}

/// Held-out rank correlation measured after `step` optimizer steps.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalPoint {
    pub step: usize,
    pub srocc: f64,
}

/// Gradient of the batch loss with respect to every merge coefficient:
/// the layer-wise inner product of the parameter gradient with each task
/// vector. Returns the loss value alongside the `n x L` gradient.
pub fn coefficient_gradient(
    base: &ModelParams,
    tvs: &[TaskVector],
    coeffs: &CoefficientMatrix,
    batch: &SampleSet,
    loss_kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let merged = merge(base, tvs, coeffs)?;
    let trace = net::forward(&merged, batch.features(), None)?;
    let (loss, dscore) = batch_loss(loss_kind, trace.scores(), batch.scores())?;
    let grads = net::backward(&merged, &trace, &dscore)?;
    let mut out = vec![0.0; tvs.len() * base.layer_count()];
    accumulate_coefficient_gradient(&grads.layers, tvs, base.layer_count(), &mut out, false);
    Ok((loss, out))
}

fn batch_loss(kind: LossKind, preds: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossKind::Rank => {
            let pairs = PairBatch::from_scores(truth);
            rank_loss(&pairs, preds)
        }
        LossKind::Mse => mse_loss(preds, truth),
    }
}

fn accumulate_coefficient_gradient(
    grads: &[crate::arch::LayerBlock],
    tvs: &[TaskVector],
    layer_count: usize,
    out: &mut [f64],
    collapse_layers: bool,
) {
    for (i, tv) in tvs.iter().enumerate() {
        for l in 0..layer_count {
            let g = &grads[l];
            let d = &tv.layers()[l];
            let mut dot = 0.0;
            for (gv, dv) in g.weight.data().iter().zip(d.weight.data()) {
                dot += gv * dv;
            }
            for (gv, dv) in g.bias.data().iter().zip(d.bias.data()) {
                dot += gv * dv;
            }
            if collapse_layers {
                out[i] += dot;
            } else {
                out[i * layer_count + l] = dot;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerMode {
    LayerWise,
    Agnostic,
}

/// Train the merge coefficients on a support set. The base and task vectors
/// are read-only; batches are drawn per step (with replacement when the
/// support is smaller than the batch), and the learning rate follows a
/// cosine schedule over `cfg.steps`. Deterministic given the seed.
///
/// With `cfg.steps == 0` the initialization is returned untouched.
pub fn train_coefficients(
    base: &ModelParams,
    tvs: &[TaskVector],
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    seed: u64,
) -> Result<(CoefficientMatrix, TrainingLog)> {
    train_impl(base, tvs, support, cfg, seed, LayerMode::LayerWise, None)
}

/// [`train_coefficients`] plus held-out rank-correlation snapshots after the
/// listed step counts.
pub fn train_coefficients_monitored(
    base: &ModelParams,
    tvs: &[TaskVector],
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    seed: u64,
    holdout: &SampleSet,
    eval_after: &[usize],
) -> Result<(CoefficientMatrix, TrainingLog)> {
    train_impl(
        base,
        tvs,
        support,
        cfg,
        seed,
        LayerMode::LayerWise,
        Some((holdout, eval_after)),
    )
}

/// One shared coefficient per task, broadcast across layers: `n` trainable
/// values instead of `n x L`. The returned matrix has a single column.
pub fn train_coefficients_layer_agnostic(
    base: &ModelParams,
    tvs: &[TaskVector],
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    seed: u64,
) -> Result<(CoefficientMatrix, TrainingLog)> {
    train_impl(base, tvs, support, cfg, seed, LayerMode::Agnostic, None)
}

fn train_impl(
    base: &ModelParams,
    tvs: &[TaskVector],
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    seed: u64,
    layer_mode: LayerMode,
    monitor: Option<(&SampleSet, &[usize])>,
) -> Result<(CoefficientMatrix, TrainingLog)> {
    if tvs.is_empty() {
        return Err(Error::Config("no task vectors to merge".into()));
    }
    if support.len() < 2 {
        return Err(Error::shape(
            "train_coefficients",
            "at least 2 support samples",
            support.len(),
        ));
    }
    if !support.has_distinct_scores() {
        return Err(Error::Unpersonalizable(
            "all support scores are tied; no ranking signal exists".into(),
        ));
    }
    let layer_count = base.layer_count();
    let task_ids: Vec<String> = tvs.iter().map(|tv| tv.task_id.clone()).collect();

    let init_row = match cfg.temperature {
        Temperature::Uniform => {
            adaptive_init(&task_ids, &vec![0.0; tvs.len()], Temperature::Uniform, 1)?
        }
        temp => {
            let models = reconstruct_models(base, tvs)?;
            let profile = zero_shot_srocc_profile(support, &models)?;
            adaptive_init(&task_ids, &profile, temp, 1)?
        }
    };

    // The trainable vector: n values in agnostic mode, n x L otherwise.
    let mut coeffs = match layer_mode {
        LayerMode::LayerWise => init_row.broadcast(layer_count),
        LayerMode::Agnostic => init_row,
    };
    let mut log = TrainingLog::default();
    if cfg.steps == 0 {
        return Ok((coeffs, log));
    }

    let mut opt = AdamW::new(
        coeffs.values().len(),
        CosineSchedule::new(cfg.start_lr, cfg.end_lr, cfg.steps)?,
        0.0,
    );
    let mut rng = rng::stream(seed, &[rng::TAG_TRAIN]);
    for step in 0..cfg.steps {
        let batch = draw_batch(support, cfg, &mut rng)?;
        let merged_coeffs = match layer_mode {
            LayerMode::LayerWise => coeffs.clone(),
            LayerMode::Agnostic => coeffs.broadcast(layer_count),
        };
        let merged = merge(base, tvs, &merged_coeffs)?;
        let trace = net::forward(&merged, batch.features(), None)?;
        let (loss, dscore) = batch_loss(cfg.loss_kind, trace.scores(), batch.scores())?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        let grads = net::backward(&merged, &trace, &dscore)?;
        let mut cg = vec![0.0; coeffs.values().len()];
        accumulate_coefficient_gradient(
            &grads.layers,
            tvs,
            layer_count,
            &mut cg,
            layer_mode == LayerMode::Agnostic,
        );
        opt.step(coeffs.values_mut(), &cg)?;
        log.losses.push(loss);

        if let Some((holdout, eval_after)) = monitor {
            if eval_after.contains(&(step + 1)) {
                let eval_coeffs = match layer_mode {
                    LayerMode::LayerWise => coeffs.clone(),
                    LayerMode::Agnostic => coeffs.broadcast(layer_count),
                };
                let model = merge(base, tvs, &eval_coeffs)?;
                let preds = net::predict(&model, holdout.features())?;
                log.evals.push(EvalPoint {
                    step: step + 1,
                    srocc: srocc(holdout.scores(), &preds)?.value,
                });
            }
        }
    }
    Ok((coeffs, log))
}

/// Rebuild each fine-tuned model as `base + delta` at unit scale.
pub fn reconstruct_models(base: &ModelParams, tvs: &[TaskVector]) -> Result<Vec<ModelParams>> {
    tvs.iter().map(|tv| apply(base, tv, 1.0)).collect()
}

fn draw_batch(
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleSet> {
    let k = support.len();
    let needs_pairs = cfg.loss_kind == LossKind::Rank;
    for _ in 0..10_000 {
        let indices: Vec<usize> = if k < cfg.batch_size {
            // Too few samples: fill the batch with replacement.
            (0..cfg.batch_size).map(|_| rng.gen_range(0..k)).collect()
        } else {
            rand::seq::index::sample(rng, k, cfg.batch_size).into_vec()
        };
        let batch = support.subset(&indices)?;
        if !needs_pairs || batch.has_distinct_scores() {
            return Ok(batch);
        }
    }
    Err(Error::Unpersonalizable(
        "could not draw a batch with at least one strictly ordered pair".into(),
    ))
}

/// Baseline: pick the source model with the best zero-shot rank correlation
/// on the support set (lowest index wins ties) and fine-tune all of its
/// parameters with the same loss and schedule. Returns the selected index,
/// the tuned model, and the loss log.
pub fn best_fit_finetune(
    models: &[ModelParams],
    support: &SampleSet,
    cfg: &PersonalizationConfig,
    seed: u64,
) -> Result<(usize, ModelParams, TrainingLog)> {
    if models.is_empty() {
        return Err(Error::Config("no candidate models".into()));
    }
    if !support.has_distinct_scores() {
        return Err(Error::Unpersonalizable(
            "all support scores are tied; no ranking signal exists".into(),
        ));
    }
    let profile = zero_shot_srocc_profile(support, models)?;
    let mut best = 0;
    for (i, &v) in profile.iter().enumerate() {
        if v > profile[best] {
            best = i;
        }
    }
    let mut model = models[best].clone();
    let mut log = TrainingLog::default();
    if cfg.steps == 0 {
        return Ok((best, model, log));
    }
    let mut flat = model.to_flat();
    let mut opt = AdamW::new(
        flat.len(),
        CosineSchedule::new(cfg.start_lr, cfg.end_lr, cfg.steps)?,
        0.0,
    );
    let mut rng = rng::stream(seed, &[rng::TAG_TRAIN]);
    for step in 0..cfg.steps {
        let batch = draw_batch(support, cfg, &mut rng)?;
        let trace = net::forward(&model, batch.features(), None)?;
        let (loss, dscore) = batch_loss(cfg.loss_kind, trace.scores(), batch.scores())?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        let grads = net::backward(&model, &trace, &dscore)?;
        opt.step(&mut flat, &grads.to_flat())?;
        model.set_from_flat(&flat)?;
        log.losses.push(loss);
    }
    Ok((best, model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchitectureDescriptor;
    use crate::taskvec::{canonicalize, extract};
    use crate::tensor::Tensor;
    use rand_distr::StandardNormal;

    fn desc() -> ArchitectureDescriptor {
        ArchitectureDescriptor::new(4, vec![6], 5)
    }

    fn fixture(n: usize, seed: u64) -> (ModelParams, Vec<TaskVector>) {
        let base = ModelParams::init(desc(), seed).unwrap();
        let tvs = (0..n)
            .map(|i| {
                let raw = ModelParams::init(desc(), seed + 100 + i as u64).unwrap();
                let ft = canonicalize(&base, &raw).unwrap();
                extract(&base, &ft, &format!("task{i}")).unwrap()
            })
            .collect();
        (base, tvs)
    }

    fn ids(tvs: &[TaskVector]) -> Vec<String> {
        tvs.iter().map(|t| t.task_id.clone()).collect()
    }

    fn random_support(n: usize, dim: usize, seed: u64) -> SampleSet {
        let mut r = rng::stream(seed, &[9]);
        let feats: Vec<f64> = (0..n * dim).map(|_| r.sample(StandardNormal)).collect();
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(1.0..10.0)).collect();
        SampleSet::new(
            Tensor::matrix(n, dim, feats).unwrap(),
            Tensor::vector(scores).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_reproduce_base_bitwise() {
        let (base, tvs) = fixture(3, 1);
        let coeffs = CoefficientMatrix::from_values(
            ids(&tvs),
            base.layer_count(),
            vec![0.0; 3 * base.layer_count()],
        )
        .unwrap();
        let merged = merge(&base, &tvs, &coeffs).unwrap();
        assert!(merged.bit_equal(&base));
    }

    #[test]
    fn unit_coefficient_reproduces_fine_tuned_bitwise() {
        let (base, tvs) = fixture(1, 2);
        let ft = apply(&base, &tvs[0], 1.0).unwrap();
        let coeffs = CoefficientMatrix::from_values(
            ids(&tvs),
            base.layer_count(),
            vec![1.0; base.layer_count()],
        )
        .unwrap();
        let merged = merge(&base, &tvs, &coeffs).unwrap();
        assert!(merged.bit_equal(&ft));
    }

    #[test]
    fn scalar_merge_arithmetic() {
        // One tracked entry: base 1.0, deltas 2.0 and -1.0, alphas 0.5 and 1.0.
        let (mut base, mut tvs) = fixture(2, 3);
        base.layers_mut()[0].weight.data_mut()[0] = 1.0;
        let mut ft0 = apply(&base, &tvs[0], 1.0).unwrap();
        ft0.layers_mut()[0].weight.data_mut()[0] = 3.0;
        let mut ft1 = apply(&base, &tvs[1], 1.0).unwrap();
        ft1.layers_mut()[0].weight.data_mut()[0] = 0.0;
        tvs[0] = extract(&base, &ft0, "task0").unwrap();
        tvs[1] = extract(&base, &ft1, "task1").unwrap();
        let l = base.layer_count();
        let mut values = vec![0.0; 2 * l];
        values[..l].fill(0.5);
        values[l..].fill(1.0);
        let coeffs = CoefficientMatrix::from_values(ids(&tvs), l, values).unwrap();
        let merged = merge(&base, &tvs, &coeffs).unwrap();
        assert_eq!(merged.layers()[0].weight.data()[0], 1.0);
    }

    #[test]
    fn merge_rejects_dimension_mismatch() {
        let (base, tvs) = fixture(2, 4);
        let bad = CoefficientMatrix::from_values(
            ids(&tvs),
            base.layer_count() + 1,
            vec![0.0; 2 * (base.layer_count() + 1)],
        )
        .unwrap();
        assert!(merge(&base, &tvs, &bad).is_err());
        let one_row = CoefficientMatrix::from_values(
            vec!["task0".into()],
            base.layer_count(),
            vec![0.0; base.layer_count()],
        )
        .unwrap();
        assert!(merge(&base, &tvs, &one_row).is_err());
    }

    #[test]
    fn merge_is_affine_in_coefficients() {
        let (base, tvs) = fixture(2, 5);
        let l = base.layer_count();
        let mut r = rng::stream(77, &[1]);
        let a: Vec<f64> = (0..2 * l).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2 * l).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (u, v) = (0.3, 0.7);
        let mixed: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| u * x + v * y).collect();
        let ca = CoefficientMatrix::from_values(ids(&tvs), l, a).unwrap();
        let cb = CoefficientMatrix::from_values(ids(&tvs), l, b).unwrap();
        let cm = CoefficientMatrix::from_values(ids(&tvs), l, mixed).unwrap();
        let ma = merge(&base, &tvs, &ca).unwrap().to_flat();
        let mb = merge(&base, &tvs, &cb).unwrap().to_flat();
        let mm = merge(&base, &tvs, &cm).unwrap().to_flat();
        let base_flat = base.to_flat();
        for j in 0..mm.len() {
            // theta(uA + vB) = theta_pre + u (theta(A) - theta_pre) + v (theta(B) - theta_pre)
            let expected = base_flat[j] + u * (ma[j] - base_flat[j]) + v * (mb[j] - base_flat[j]);
            assert!((mm[j] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn adaptive_init_limits_and_values() {
        let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let equal = adaptive_init(&ids, &[0.4; 6], Temperature::Finite(1.0), 3).unwrap();
        for v in equal.values() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        assert!(equal.is_layer_constant());

        let two: Vec<String> = vec!["a".into(), "b".into()];
        let soft = adaptive_init(&two, &[0.5, 0.0], Temperature::Finite(1.0), 2).unwrap();
        let expected = 0.5f64.exp() / (0.5f64.exp() + 1.0);
        assert!((soft.get(0, 0) - expected).abs() < 1e-12);
        assert!((soft.get(1, 0) - (1.0 - expected)).abs() < 1e-12);
        let per_layer_sum: f64 = soft.get(0, 1) + soft.get(1, 1);
        assert!((per_layer_sum - 1.0).abs() < 1e-12);

        let three: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let hard = adaptive_init(&three, &[0.3, 0.9, 0.1], Temperature::BestFit, 2).unwrap();
        assert_eq!(hard.values(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);

        let uni = adaptive_init(&three, &[9.0, -2.0, 0.0], Temperature::Uniform, 1).unwrap();
        for v in uni.values() {
            assert_eq!(*v, 1.0 / 3.0);
        }
    }

    #[test]
    fn best_fit_tie_breaks_to_lowest_index() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let cm = adaptive_init(&ids, &[0.9, 0.9, 0.1], Temperature::BestFit, 1).unwrap();
        assert_eq!(cm.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn temperature_scaling_preserves_row_order() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let profile = [0.2, 0.8, -0.1];
        for t in [0.1, 1.0, 10.0] {
            let cm = adaptive_init(&ids, &profile, Temperature::Finite(t), 1).unwrap();
            assert!(cm.get(1, 0) > cm.get(0, 0));
            assert!(cm.get(0, 0) > cm.get(2, 0));
        }
    }

    #[test]
    fn zero_delta_gets_zero_gradient() {
        let (base, mut tvs) = fixture(2, 6);
        // Task 1 becomes an all-zero delta.
        tvs[1] = extract(&base, &base, "task1").unwrap();
        let l = base.layer_count();
        let coeffs = CoefficientMatrix::from_values(ids(&tvs), l, vec![0.3; 2 * l]).unwrap();
        let batch = random_support(8, 4, 7);
        let (_, grad) = coefficient_gradient(&base, &tvs, &coeffs, &batch, LossKind::Rank).unwrap();
        for lidx in 0..l {
            assert_eq!(grad[l + lidx], 0.0, "layer {lidx}");
        }
        assert!(grad[..l].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn coefficient_gradient_matches_finite_differences() {
        let (base, tvs) = fixture(2, 8);
        let l = base.layer_count();
        let coeffs = CoefficientMatrix::from_values(
            ids(&tvs),
            l,
            vec![0.4, 0.1, -0.2, 0.7, 0.05, 0.3, 0.2, -0.4][..2 * l].to_vec(),
        )
        .unwrap();
        let batch = random_support(8, 4, 9);
        for kind in [LossKind::Rank, LossKind::Mse] {
            let (_, grad) = coefficient_gradient(&base, &tvs, &coeffs, &batch, kind).unwrap();
            let loss_of = |values: &[f64]| -> f64 {
                let c = CoefficientMatrix::from_values(ids(&tvs), l, values.to_vec()).unwrap();
                let m = merge(&base, &tvs, &c).unwrap();
                let preds = net::predict(&m, batch.features()).unwrap();
                batch_loss(kind, &preds, batch.scores()).unwrap().0
            };
            let vals = coeffs.values();
            for j in 0..vals.len() {
                let h = 1e-5 * vals[j].abs().max(1.0);
                let mut plus = vals.to_vec();
                let mut minus = vals.to_vec();
                plus[j] += h;
                minus[j] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "{kind:?} coeff {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn doubling_deltas_doubles_gradient_at_fixed_merge() {
        let (base, tvs) = fixture(2, 10);
        let l = base.layer_count();
        let alphas = vec![0.6; 2 * l];
        let halved: Vec<f64> = alphas.iter().map(|a| a / 2.0).collect();
        let coeffs = CoefficientMatrix::from_values(ids(&tvs), l, alphas).unwrap();
        let coeffs_half = CoefficientMatrix::from_values(ids(&tvs), l, halved).unwrap();
        let doubled: Vec<TaskVector> = tvs
            .iter()
            .map(|tv| crate::taskvec::scale(tv, 2.0))
            .collect();
        let batch = random_support(8, 4, 11);
        // Same merged weights, twice the delta: gradients double exactly.
        let m1 = merge(&base, &tvs, &coeffs).unwrap();
        let m2 = merge(&base, &doubled, &coeffs_half).unwrap();
        assert!(m1.bit_equal(&m2));
        let (_, g1) = coefficient_gradient(&base, &tvs, &coeffs, &batch, LossKind::Rank).unwrap();
        let (_, g2) =
            coefficient_gradient(&base, &doubled, &coeffs_half, &batch, LossKind::Rank).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!(
                (2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (base, tvs) = fixture(3, 12);
        let support = random_support(6, 4, 13);
        let mut cfg = PersonalizationConfig {
            steps: 0,
            ..Default::default()
        };
        cfg.temperature = Temperature::Finite(1.0);
        let (coeffs, log) = train_coefficients(&base, &tvs, &support, &cfg, 1).unwrap();
        assert!(log.losses.is_empty());
        let models = reconstruct_models(&base, &tvs).unwrap();
        let profile = zero_shot_srocc_profile(&support, &models).unwrap();
        let expected =
            adaptive_init(&ids(&tvs), &profile, cfg.temperature, base.layer_count()).unwrap();
        assert_eq!(coeffs, expected);
        assert!(coeffs.is_layer_constant());
    }

    #[test]
    fn training_runs_logged_steps_and_freezes_inputs() {
        let (base, tvs) = fixture(2, 14);
        let base_before = base.clone();
        let tvs_before = tvs.clone();
        let support = random_support(10, 4, 15);
        let cfg = PersonalizationConfig {
            steps: 25,
            ..Default::default()
        };
        let (coeffs, log) = train_coefficients(&base, &tvs, &support, &cfg, 2).unwrap();
        assert_eq!(log.losses.len(), 25);
        assert!(base.bit_equal(&base_before));
        for (a, b) in tvs.iter().zip(&tvs_before) {
            assert!(a.bit_equal(b));
        }
        // Training moved the coefficients off their layer-constant start.
        assert!(!coeffs.is_layer_constant());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (base, tvs) = fixture(2, 16);
        let support = random_support(10, 4, 17);
        let cfg = PersonalizationConfig {
            steps: 30,
            ..Default::default()
        };
        let (c1, l1) = train_coefficients(&base, &tvs, &support, &cfg, 5).unwrap();
        let (c2, l2) = train_coefficients(&base, &tvs, &support, &cfg, 5).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(l1.losses, l2.losses);
        let (c3, _) = train_coefficients(&base, &tvs, &support, &cfg, 6).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn default_config_runs_five_hundred_annealed_steps() {
        let cfg = PersonalizationConfig::default();
        assert_eq!(cfg.steps, 500);
        assert_eq!(cfg.start_lr, 1.0e-2);
        assert_eq!(cfg.end_lr, 1.0e-3);
        assert_eq!(cfg.batch_size, 32);
        let schedule =
            crate::optim::CosineSchedule::new(cfg.start_lr, cfg.end_lr, cfg.steps).unwrap();
        assert_eq!(schedule.lr_at(cfg.steps), 1.0e-3);
        // K = 10 < batch_size exercises the with-replacement path.
        let (base, tvs) = fixture(2, 40);
        let support = random_support(10, 4, 41);
        let (_, log) = train_coefficients(&base, &tvs, &support, &cfg, 1).unwrap();
        assert_eq!(log.losses.len(), 500);
    }

    #[test]
    fn layer_modes_coincide_for_single_block_deltas() {
        // Each task's delta touches exactly one block, so the layer-wise
        // gradient of its one active coefficient equals the agnostic
        // gradient of its shared coefficient: the trainers must follow
        // identical trajectories.
        let (base, tvs_full) = fixture(2, 42);
        let l = base.layer_count();
        let tvs: Vec<TaskVector> = tvs_full
            .iter()
            .enumerate()
            .map(|(i, tv)| {
                let active = i % l;
                let layers: Vec<crate::arch::LayerBlock> = tv
                    .layers()
                    .iter()
                    .enumerate()
                    .map(|(j, block)| {
                        if j == active {
                            block.clone()
                        } else {
                            crate::arch::LayerBlock::zeros(block.out_dim(), block.in_dim())
                        }
                    })
                    .collect();
                TaskVector::from_layers(tv.task_id.clone(), layers, tv.provenance)
            })
            .collect();
        let support = random_support(10, 4, 43);
        let cfg = PersonalizationConfig {
            steps: 60,
            ..Default::default()
        };
        let (wise, log_w) = train_coefficients(&base, &tvs, &support, &cfg, 7).unwrap();
        let (agn, log_a) =
            train_coefficients_layer_agnostic(&base, &tvs, &support, &cfg, 7).unwrap();
        assert_eq!(
            log_w.losses, log_a.losses,
            "loss trajectories must coincide"
        );
        for (i, tv) in tvs.iter().enumerate() {
            let active = i % l;
            let _ = tv;
            assert_eq!(
                wise.get(i, active).to_bits(),
                agn.get(i, 0).to_bits(),
                "task {i} active coefficient"
            );
        }
    }

    #[test]
    fn text_dump_lists_tasks_and_layers() {
        let ids: Vec<String> = vec!["alpha".into(), "beta".into()];
        let cm = CoefficientMatrix::from_values(ids, 2, vec![0.25, 0.5, 1.0, -1.5]).unwrap();
        let text = cm.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "task_id\tlayer0\tlayer1");
        assert_eq!(lines[1], "alpha\t0.25\t0.5");
        assert_eq!(lines[2], "beta\t1\t-1.5");
    }

    #[test]
    fn tied_support_is_unpersonalizable() {
        let (base, tvs) = fixture(2, 18);
        let feats = Tensor::matrix(4, 4, vec![0.1; 16]).unwrap();
        let scores = Tensor::vector(vec![5.0; 4]).unwrap();
        let support = SampleSet::new(feats, scores).unwrap();
        let cfg = PersonalizationConfig::default();
        assert!(matches!(
            train_coefficients(&base, &tvs, &support, &cfg, 1),
            Err(Error::Unpersonalizable(_))
        ));
    }

    #[test]
    fn agnostic_mode_trains_n_values() {
        let (base, tvs) = fixture(3, 19);
        let support = random_support(10, 4, 20);
        let cfg = PersonalizationConfig {
            steps: 10,
            ..Default::default()
        };
        let (coeffs, _) =
            train_coefficients_layer_agnostic(&base, &tvs, &support, &cfg, 3).unwrap();
        assert_eq!(coeffs.layer_count(), 1);
        assert_eq!(coeffs.values().len(), 3);
        let full = coeffs.broadcast(base.layer_count());
        assert!(merge(&base, &tvs, &full).is_ok());
    }

    #[test]
    fn best_fit_selects_profile_argmax_and_zero_steps_is_identity() {
        let (base, tvs) = fixture(3, 21);
        let models = reconstruct_models(&base, &tvs).unwrap();
        let support = random_support(8, 4, 22);
        let profile = zero_shot_srocc_profile(&support, &models).unwrap();
        let argmax = profile
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let cfg = PersonalizationConfig {
            steps: 0,
            ..Default::default()
        };
        let (sel, model, log) = best_fit_finetune(&models, &support, &cfg, 1).unwrap();
        assert_eq!(sel, argmax);
        assert!(model.bit_equal(&models[sel]));
        assert!(log.losses.is_empty());
    }

    #[test]
    fn constant_model_contributes_degenerate_zero_to_profile() {
        let (base, tvs) = fixture(1, 23);
        let mut constant = apply(&base, &tvs[0], 1.0).unwrap();
        let last = constant.layer_count() - 1;
        constant.layers_mut()[last].weight.data_mut().fill(0.0);
        constant.layers_mut()[last].bias.data_mut().fill(0.0);
        let support = random_support(6, 4, 24);
        let profile = zero_shot_srocc_profile(&support, &[constant]).unwrap();
        assert_eq!(profile, vec![0.0]);
    }

    #[test]
    fn constant_truth_is_a_degenerate_metric_error() {
        let (base, tvs) = fixture(1, 25);
        let models = reconstruct_models(&base, &tvs).unwrap();
        let feats = Tensor::matrix(4, 4, (0..16).map(|i| i as f64 * 0.1).collect()).unwrap();
        let scores = Tensor::vector(vec![3.0; 4]).unwrap();
        let support = SampleSet::new(feats, scores).unwrap();
        assert!(matches!(
            zero_shot_srocc_profile(&support, &models),
            Err(Error::DegenerateInput(_))
        ));
    }
}
