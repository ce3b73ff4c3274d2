//! Supervised training of full models: the one-time stage that produces a
//! shared base plus one fine-tuned model per database.
//!
//! The base trains briefly on data pooled across every database, giving all
//! fine-tunes a common origin. Each fine-tune then runs two stages: head
//! layers only with the backbone frozen, then the whole network at a tenth
//! of the rate. Fine-tuned weights are canonicalized against the base so
//! delta extraction round-trips bit-exactly.

use crate::arch::ModelParams;
use crate::error::{Error, Result};
use crate::loss::mse_loss;
use crate::metrics::srocc;
use crate::net;
use crate::optim::{AdamW, CosineSchedule};
use crate::rng;
use crate::sample::SampleSet;
use crate::synth::TaskUniverse;
use crate::taskvec::{self, TaskVector};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which layers a training stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    Full,
    /// Only the head blocks (everything after the backbone hiddens).
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedRecipe {
    pub steps: usize,
    pub start_lr: f64,
    pub end_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub scope: TrainScope,
    /// Train-mode dropout on hidden units.
    pub use_dropout: bool,
}

/// Mean-squared-error training on (features, scores). Returns the trained
/// model and the per-step loss curve. Deterministic given the seed.
pub fn train_supervised(
    start: &ModelParams,
    data: &SampleSet,
    recipe: &SupervisedRecipe,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    if data.len() < 2 {
        return Err(Error::shape(
            "train_supervised",
            "at least 2 samples",
            data.len(),
        ));
    }
    if data.dim() != start.descriptor().input_dim {
        return Err(Error::shape(
            "train_supervised",
            start.descriptor().input_dim,
            data.dim(),
        ));
    }
    if recipe.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = start.clone();
    let mut losses = Vec::with_capacity(recipe.steps);
    if recipe.steps == 0 {
        return Ok((model, losses));
    }
    let first_layer = match recipe.scope {
        TrainScope::Full => 0,
        TrainScope::HeadOnly => start.descriptor().hidden_dims.len(),
    };
    let mut flat = layers_to_flat(&model, first_layer);
    let mut opt = AdamW::new(
        flat.len(),
        CosineSchedule::new(recipe.start_lr, recipe.end_lr, recipe.steps)?,
        recipe.weight_decay,
    );
    let mut batch_rng = rng::stream(seed, &[rng::TAG_TRAIN, 0]);
    let mut dropout_rng = rng::stream(seed, &[rng::TAG_TRAIN, 1]);
    for step in 0..recipe.steps {
        let indices: Vec<usize> = if data.len() <= recipe.batch_size {
            (0..data.len()).collect()
        } else {
            rand::seq::index::sample(&mut batch_rng, data.len(), recipe.batch_size).into_vec()
        };
        let batch = data.subset(&indices)?;
        let trace = net::forward(
            &model,
            batch.features(),
            recipe.use_dropout.then_some(&mut dropout_rng),
        )?;
        let (loss, dscore) = mse_loss(trace.scores(), batch.scores())?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        let grads = net::backward(&model, &trace, &dscore)?;
        let gflat = grad_layers_to_flat(&grads.layers, first_layer);
        opt.step(&mut flat, &gflat)?;
        set_layers_from_flat(&mut model, first_layer, &flat)?;
        losses.push(loss);
    }
    Ok((model, losses))
}

fn layers_to_flat(params: &ModelParams, first_layer: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for block in &params.layers()[first_layer..] {
        out.extend_from_slice(block.weight.data());
        out.extend_from_slice(block.bias.data());
    }
    out
}

fn grad_layers_to_flat(layers: &[crate::arch::LayerBlock], first_layer: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for block in &layers[first_layer..] {
        out.extend_from_slice(block.weight.data());
        out.extend_from_slice(block.bias.data());
    }
    out
}

fn set_layers_from_flat(params: &mut ModelParams, first_layer: usize, flat: &[f64]) -> Result<()> {
    let mut off = 0;
    for block in &mut params.layers_mut()[first_layer..] {
        let w = block.weight.len();
        block.weight.data_mut().copy_from_slice(&flat[off..off + w]);
        off += w;
        let b = block.bias.len();
        block.bias.data_mut().copy_from_slice(&flat[off..off + b]);
        off += b;
    }
    if off != flat.len() {
        return Err(Error::shape("set_layers_from_flat", off, flat.len()));
    }
    Ok(())
}

/// Eval-mode rank correlation of a model on a sample set.
pub fn evaluate_srocc(params: &ModelParams, data: &SampleSet) -> Result<f64> {
    let preds = net::predict(params, data.features())?;
    Ok(srocc(data.scores(), &preds)?.value)
}

/// Hyperparameters of the one-time stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase1Config {
    pub base_steps: usize,
    pub base_start_lr: f64,
    pub base_end_lr: f64,
    pub base_batch_size: usize,
    pub head_steps: usize,
    pub head_start_lr: f64,
    pub head_end_lr: f64,
    pub head_batch_size: usize,
    pub finetune_steps: usize,
    pub finetune_start_lr: f64,
    pub finetune_end_lr: f64,
    pub finetune_batch_size: usize,
    pub weight_decay: f64,
    /// Held-out samples drawn per database for post-training evaluation.
    pub eval_samples: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            base_steps: 300,
            base_start_lr: 3e-3,
            base_end_lr: 3e-4,
            base_batch_size: 64,
            head_steps: 800,
            head_start_lr: 1e-2,
            head_end_lr: 1e-3,
            head_batch_size: 64,
            finetune_steps: 500,
            finetune_start_lr: 1e-3,
            finetune_end_lr: 1e-4,
            finetune_batch_size: 32,
            weight_decay: 1e-4,
            eval_samples: 500,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<()> {
        for (name, steps, start, end, batch) in [
            (
                "base",
                self.base_steps,
                self.base_start_lr,
                self.base_end_lr,
                self.base_batch_size,
            ),
            (
                "head",
                self.head_steps,
                self.head_start_lr,
                self.head_end_lr,
                self.head_batch_size,
            ),
            (
                "finetune",
                self.finetune_steps,
                self.finetune_start_lr,
                self.finetune_end_lr,
                self.finetune_batch_size,
            ),
        ] {
            if steps == 0 || batch == 0 {
                return Err(Error::Config(format!(
                    "{name} stage needs positive steps and batch size"
                )));
            }
            if !(end > 0.0 && end <= start) {
                return Err(Error::Config(format!(
                    "{name} stage needs 0 < end_lr <= start_lr"
                )));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.eval_samples < 2 {
            return Err(Error::Config("eval_samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// Everything the one-time stage produces.
#[derive(Debug, Clone)]
pub struct Phase1Output {
    pub base: ModelParams,
    /// (task id, fine-tuned params), canonicalized against the base.
    pub fine_tuned: Vec<(String, ModelParams)>,
    pub task_vectors: Vec<TaskVector>,
    /// Held-out rank correlation of each fine-tuned model on its own
    /// database.
    pub holdout_srocc: Vec<f64>,
}

pub fn database_task_id(i: usize) -> String {
    format!("db{i}")
}

/// Train the shared base on pooled data, then branch one fine-tune per
/// database and extract its task vector.
pub fn run_phase1(
    universe: &TaskUniverse,
    descriptor: &crate::arch::ArchitectureDescriptor,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<Phase1Output> {
    cfg.validate()?;
    descriptor.validate()?;
    if descriptor.input_dim != universe.config().feature_dim {
        return Err(Error::Config(format!(
            "architecture input_dim {} does not match universe feature_dim {}",
            descriptor.input_dim,
            universe.config().feature_dim
        )));
    }
    let n = universe.config().n_databases;
    let per_db = universe.config().samples_per_database;
    let train_sets: Vec<SampleSet> = (0..n)
        .map(|i| universe.generate_database(i, per_db, 0))
        .collect::<Result<_>>()?;
    let pooled = concat_sets(&train_sets)?;

    let init = ModelParams::init(descriptor.clone(), rng::derive(seed, &[rng::TAG_INIT]))?;
    let base_recipe = SupervisedRecipe {
        steps: cfg.base_steps,
        start_lr: cfg.base_start_lr,
        end_lr: cfg.base_end_lr,
        batch_size: cfg.base_batch_size,
        weight_decay: cfg.weight_decay,
        scope: TrainScope::Full,
        use_dropout: true,
    };
    let (base, _) = train_supervised(&init, &pooled, &base_recipe, rng::derive(seed, &[11]))?;

    let mut fine_tuned = Vec::with_capacity(n);
    let mut task_vectors = Vec::with_capacity(n);
    let mut holdout_srocc = Vec::with_capacity(n);
    for (i, train) in train_sets.iter().enumerate() {
        let head_recipe = SupervisedRecipe {
            steps: cfg.head_steps,
            start_lr: cfg.head_start_lr,
            end_lr: cfg.head_end_lr,
            batch_size: cfg.head_batch_size,
            weight_decay: cfg.weight_decay,
            scope: TrainScope::HeadOnly,
            use_dropout: true,
        };
        let (head_tuned, _) = train_supervised(
            &base,
            train,
            &head_recipe,
            rng::derive(seed, &[21, i as u64]),
        )?;
        let ft_recipe = SupervisedRecipe {
            steps: cfg.finetune_steps,
            start_lr: cfg.finetune_start_lr,
            end_lr: cfg.finetune_end_lr,
            batch_size: cfg.finetune_batch_size,
            weight_decay: cfg.weight_decay,
            scope: TrainScope::Full,
            use_dropout: true,
        };
        let (raw_ft, _) = train_supervised(
            &head_tuned,
            train,
            &ft_recipe,
            rng::derive(seed, &[22, i as u64]),
        )?;
        let ft = taskvec::canonicalize(&base, &raw_ft)?;
        let id = database_task_id(i);
        task_vectors.push(taskvec::extract(&base, &ft, &id)?);
        let eval = universe.generate_database(i, cfg.eval_samples, u64::MAX - 1)?;
        holdout_srocc.push(evaluate_srocc(&ft, &eval)?);
        fine_tuned.push((id, ft));
    }
    Ok(Phase1Output {
        base,
        fine_tuned,
        task_vectors,
        holdout_srocc,
    })
}

/// Row-concatenate sample sets (all must share the feature width).
pub fn concat_sets(sets: &[SampleSet]) -> Result<SampleSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Config("no sample sets to pool".into()))?;
    let d = first.dim();
    let total: usize = sets.iter().map(SampleSet::len).sum();
    let mut feats = Vec::with_capacity(total * d);
    let mut scores = Vec::with_capacity(total);
    for set in sets {
        if set.dim() != d {
            return Err(Error::shape("concat_sets", d, set.dim()));
        }
        feats.extend_from_slice(set.features().data());
        scores.extend_from_slice(set.scores());
    }
    SampleSet::new(Tensor::matrix(total, d, feats)?, Tensor::vector(scores)?)
}

/// Shuffle-split a sample set into train and holdout parts.
pub fn split_holdout(
    data: &SampleSet,
    holdout: usize,
    seed: u64,
) -> Result<(SampleSet, SampleSet)> {
    if holdout == 0 || holdout >= data.len() {
        return Err(Error::Config(format!(
            "holdout size {holdout} must be positive and below {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(seed, &[rng::TAG_TRAIN, 99]);
    // Fisher-Yates.
    for i in (1..order.len()).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    let (hold, train) = order.split_at(holdout);
    Ok((data.subset(train)?, data.subset(hold)?))
}
