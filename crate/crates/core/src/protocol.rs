//! The personalization evaluation protocol: for every user and trial, draw
//! a fresh K-shot support set, personalize, and score the result on the
//! user's held-out test set.
//!
//! (user, trial) jobs are independent and may run on a worker pool; every
//! job owns a seed derived from the master seed, and results are assembled
//! in canonical order, so parallelism never changes a single output byte.

use crate::arch::ModelParams;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::metrics::srocc;
use crate::net;
use crate::personalize::{
    best_fit_finetune, reconstruct_models, train_coefficients_layer_agnostic,
    train_coefficients_monitored, CoefficientMatrix, EvalPoint, PersonalizationConfig, Temperature,
};
use crate::rng;
use crate::synth::{TaskUniverse, UserSpec};
use crate::taskvec::TaskVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The frozen merge inputs: one base model plus its task vectors.
#[derive(Debug, Clone)]
pub struct MergeAssets {
    pub base: ModelParams,
    pub task_vectors: Vec<TaskVector>,
}

impl MergeAssets {
    /// Validates congruence, unique task ids, and that every delta was
    /// derived from this base.
    pub fn new(base: ModelParams, task_vectors: Vec<TaskVector>) -> Result<Self> {
        if task_vectors.is_empty() {
            return Err(Error::Dependency("no task vectors available".into()));
        }
        let base_hash = checkpoint::params_hash(&base);
        for (i, tv) in task_vectors.iter().enumerate() {
            if !tv.congruent_with(&base) {
                return Err(Error::DescriptorMismatch(format!(
                    "task vector '{}' incongruent with base",
                    tv.task_id
                )));
            }
            if tv.provenance.pre_hash != base_hash {
                return Err(Error::Dependency(format!(
                    "task vector '{}' was not derived from this base model",
                    tv.task_id
                )));
            }
            if task_vectors[..i]
                .iter()
                .any(|other| other.task_id == tv.task_id)
            {
                return Err(Error::Dependency(format!(
                    "duplicate task id '{}'",
                    tv.task_id
                )));
            }
        }
        Ok(Self { base, task_vectors })
    }

    pub fn task_count(&self) -> usize {
        self.task_vectors.len()
    }
}

/// How each user gets personalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Layer-wise merge coefficients (the full method).
    #[default]
    Coefficients,
    /// One shared coefficient per task.
    CoefficientsLayerAgnostic,
    /// Fully fine-tune the best-matching source model.
    BestFitFinetune,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Coefficients => "coefficients",
            Method::CoefficientsLayerAgnostic => "coefficients_layer_agnostic",
            Method::BestFitFinetune => "best_fit_finetune",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub trials: usize,
    pub personalization: PersonalizationConfig,
    pub method: Method,
    /// Use only the first `n` task vectors when set (scaling sweeps).
    pub n_tasks: Option<usize>,
    /// Step counts after which held-out rank correlation is snapshotted.
    pub eval_after: Vec<usize>,
    /// Keep every k-th per-step loss in the record (the last is always kept).
    pub loss_curve_stride: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            personalization: PersonalizationConfig::default(),
            method: Method::Coefficients,
            n_tasks: None,
            eval_after: Vec::new(),
            loss_curve_stride: 25,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, available_tasks: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        self.personalization.validate()?;
        if let Some(n) = self.n_tasks {
            if n == 0 || n > available_tasks {
                return Err(Error::Config(format!(
                    "n_tasks {n} out of range (1..={available_tasks})"
                )));
            }
        }
        if self.loss_curve_stride == 0 {
            return Err(Error::Config("loss_curve_stride must be positive".into()));
        }
        Ok(())
    }
}

/// One personalization run for one (user, trial) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub user: usize,
    pub trial: usize,
    pub seed: u64,
    pub shots: usize,
    /// Zero-shot rank correlation of each source model on this trial's
    /// support set.
    pub support_profile: Vec<f64>,
    pub final_srocc: f64,
    pub final_loss: Option<f64>,
    /// Down-sampled per-step training losses.
    pub loss_curve: Vec<f64>,
    /// Held-out snapshots requested through `eval_after`.
    pub eval_curve: Vec<(usize, f64)>,
    /// Final merge coefficients (absent for the fine-tuning baseline).
    pub coefficients: Option<CoefficientMatrix>,
    /// Index of the model the fine-tuning baseline selected.
    pub selected_model: Option<usize>,
}

/// All trials of one user plus the user-level zero-shot baselines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserResult {
    pub user: usize,
    pub spec: UserSpec,
    /// Zero-shot rank correlation of each source model on the user's test
    /// set.
    pub test_profile: Vec<f64>,
    /// Mean of `test_profile` (the ensemble-like no-training baseline).
    pub zero_shot_mean: f64,
    pub trials: Vec<TrialRecord>,
    pub mean_srocc: f64,
    pub std_srocc: f64,
}

/// Protocol output for one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub method: Method,
    pub loss: LossKind,
    pub init_label: String,
    pub n_tasks: usize,
    pub shots: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub users: Vec<UserResult>,
    /// Mean over users of their per-user trial means.
    pub aggregate_mean: f64,
    /// Sample standard deviation across trials of the per-trial user means.
    pub aggregate_std: f64,
}

pub fn temperature_label(t: Temperature) -> String {
    match t {
        Temperature::Uniform => "uniform".to_string(),
        Temperature::BestFit => "best_fit".to_string(),
        Temperature::Finite(v) => format!("adaptive(T={v})"),
    }
}

/// Run the full protocol. Deterministic in (inputs, master_seed); the rayon
/// pool size only affects wall time.
pub fn run_protocol(
    universe: &TaskUniverse,
    users: &[UserSpec],
    assets: &MergeAssets,
    cfg: &ProtocolConfig,
    master_seed: u64,
) -> Result<ProtocolResult> {
    cfg.validate(assets.task_count())?;
    if users.is_empty() {
        return Err(Error::Config("no users to evaluate".into()));
    }
    let n_tasks = cfg.n_tasks.unwrap_or(assets.task_count());
    let tvs = &assets.task_vectors[..n_tasks];
    let models = reconstruct_models(&assets.base, tvs)?;

    // Per-user fixtures: scorer and held-out test set.
    let fixtures: Vec<(Vec<f64>, crate::sample::SampleSet)> = users
        .par_iter()
        .enumerate()
        .map(|(u, spec)| {
            let scorer = universe.user_scorer(spec, u as u64)?;
            let test = universe.draw_test(spec, &scorer, u as u64)?;
            Ok((scorer, test))
        })
        .collect::<Result<_>>()?;

    let test_profiles: Vec<Vec<f64>> = fixtures
        .par_iter()
        .map(|(_, test)| {
            models
                .iter()
                .map(|m| Ok(srocc(test.scores(), &net::predict(m, test.features())?)?.value))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..users.len())
        .flat_map(|u| (0..cfg.trials).map(move |t| (u, t)))
        .collect();
    let mut records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(u, t)| {
            run_trial(
                universe,
                &users[u],
                &fixtures[u],
                assets,
                tvs,
                &models,
                cfg,
                master_seed,
                u,
                t,
            )
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| (r.user, r.trial));

    let mut user_results = Vec::with_capacity(users.len());
    for (u, spec) in users.iter().enumerate() {
        let trials: Vec<TrialRecord> = records.iter().filter(|r| r.user == u).cloned().collect();
        let sroccs: Vec<f64> = trials.iter().map(|r| r.final_srocc).collect();
        let mean = mean(&sroccs);
        let std = sample_std(&sroccs);
        let test_profile = test_profiles[u].clone();
        let zero_shot_mean = mean_of(&test_profile);
        user_results.push(UserResult {
            user: u,
            spec: spec.clone(),
            test_profile,
            zero_shot_mean,
            trials,
            mean_srocc: mean,
            std_srocc: std,
        });
    }

    let aggregate_mean = mean_of(
        &user_results
            .iter()
            .map(|u| u.mean_srocc)
            .collect::<Vec<_>>(),
    );
    // Per-trial mean over users, then std across trials.
    let per_trial_means: Vec<f64> = (0..cfg.trials)
        .map(|t| {
            mean_of(
                &user_results
                    .iter()
                    .map(|u| u.trials[t].final_srocc)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let aggregate_std = sample_std(&per_trial_means);

    Ok(ProtocolResult {
        method: cfg.method,
        loss: cfg.personalization.loss_kind,
        init_label: temperature_label(cfg.personalization.temperature),
        n_tasks,
        shots: cfg.personalization.shots,
        trials: cfg.trials,
        master_seed,
        users: user_results,
        aggregate_mean,
        aggregate_std,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    universe: &TaskUniverse,
    spec: &UserSpec,
    fixture: &(Vec<f64>, crate::sample::SampleSet),
    assets: &MergeAssets,
    tvs: &[TaskVector],
    models: &[ModelParams],
    cfg: &ProtocolConfig,
    master_seed: u64,
    user: usize,
    trial: usize,
) -> Result<TrialRecord> {
    let (scorer, test) = fixture;
    let shots = cfg.personalization.shots;
    let support = universe.draw_support(spec, scorer, shots, user as u64, trial as u64)?;
    let support_profile = models
        .iter()
        .map(|m| Ok(srocc(support.scores(), &net::predict(m, support.features())?)?.value))
        .collect::<Result<Vec<f64>>>()?;
    let seed = rng::derive(master_seed, &[rng::TAG_TRIAL, user as u64, trial as u64]);

    let (final_srocc, final_loss, loss_curve, eval_curve, coefficients, selected_model) =
        match cfg.method {
            Method::Coefficients => {
                let (coeffs, log) = train_coefficients_monitored(
                    &assets.base,
                    tvs,
                    &support,
                    &cfg.personalization,
                    seed,
                    test,
                    &cfg.eval_after,
                )?;
                let personalized = crate::personalize::merge(&assets.base, tvs, &coeffs)?;
                let s = srocc(
                    test.scores(),
                    &net::predict(&personalized, test.features())?,
                )?
                .value;
                (
                    s,
                    log.losses.last().copied(),
                    downsample(&log.losses, cfg.loss_curve_stride),
                    log.evals
                        .iter()
                        .map(|e: &EvalPoint| (e.step, e.srocc))
                        .collect(),
                    Some(coeffs),
                    None,
                )
            }
            Method::CoefficientsLayerAgnostic => {
                let (coeffs, log) = train_coefficients_layer_agnostic(
                    &assets.base,
                    tvs,
                    &support,
                    &cfg.personalization,
                    seed,
                )?;
                let full = coeffs.broadcast(assets.base.layer_count());
                let personalized = crate::personalize::merge(&assets.base, tvs, &full)?;
                let s = srocc(
                    test.scores(),
                    &net::predict(&personalized, test.features())?,
                )?
                .value;
                (
                    s,
                    log.losses.last().copied(),
                    downsample(&log.losses, cfg.loss_curve_stride),
                    Vec::new(),
                    Some(coeffs),
                    None,
                )
            }
            Method::BestFitFinetune => {
                let (selected, model, log) =
                    best_fit_finetune(models, &support, &cfg.personalization, seed)?;
                let s = srocc(test.scores(), &net::predict(&model, test.features())?)?.value;
                (
                    s,
                    log.losses.last().copied(),
                    downsample(&log.losses, cfg.loss_curve_stride),
                    Vec::new(),
                    None,
                    Some(selected),
                )
            }
        };

    Ok(TrialRecord {
        user,
        trial,
        seed,
        shots,
        support_profile,
        final_srocc,
        final_loss,
        loss_curve,
        eval_curve,
        coefficients,
        selected_model,
    })
}

fn downsample(losses: &[f64], stride: usize) -> Vec<f64> {
    if losses.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<f64> = losses.iter().step_by(stride.max(1)).copied().collect();
    let last = *losses.last().expect("non-empty");
    if !(losses.len() - 1).is_multiple_of(stride.max(1)) {
        out.push(last);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    mean_of(xs)
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 in the denominator).
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean_of(xs);
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0);
    var.sqrt()
}
