//! Experiment configuration: one canonical TOML schema.
//!
//! Unknown keys are errors, not warnings, so typos cannot silently fall
//! back to defaults.

use crate::arch::ArchitectureDescriptor;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::personalize::{PersonalizationConfig, Temperature};
use crate::protocol::{Method, ProtocolConfig};
use crate::synth::{UniverseConfig, UserGenConfig};
use crate::trainer::Phase1Config;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Adaptive,
    Uniform,
    BestFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    #[default]
    Layerwise,
    Agnostic,
}

/// The `[personalize]` section: hyperparameters plus ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonalizeSection {
    pub k_shots: Vec<usize>,
    pub trials: usize,
    pub steps: usize,
    pub start_lr: f64,
    pub end_lr: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub init: InitKind,
    /// Softmax temperature used when `init = "adaptive"`.
    pub temperature: f64,
    pub layer_mode: LayerMode,
    /// Task-vector counts to sweep; empty means one run with all vectors.
    pub n_tasks_sweep: Vec<usize>,
    /// Also run the direct fine-tuning baseline.
    pub best_fit_ft: bool,
    /// Step counts after which held-out correlation is snapshotted.
    pub eval_after: Vec<usize>,
    pub loss_curve_stride: usize,
}

impl Default for PersonalizeSection {
    fn default() -> Self {
        Self {
            k_shots: vec![10, 100],
            trials: 10,
            steps: 500,
            start_lr: 1.0e-2,
            end_lr: 1.0e-3,
            batch_size: 32,
            loss: LossKind::Rank,
            init: InitKind::Adaptive,
            temperature: 1.0,
            layer_mode: LayerMode::Layerwise,
            n_tasks_sweep: Vec::new(),
            best_fit_ft: false,
            eval_after: Vec::new(),
            loss_curve_stride: 25,
        }
    }
}

impl PersonalizeSection {
    pub fn validate(&self) -> Result<()> {
        if self.k_shots.is_empty() {
            return Err(Error::Config("k_shots must not be empty".into()));
        }
        if self.k_shots.iter().any(|&k| k < 2) {
            return Err(Error::Config(
                "every k_shots entry must be at least 2".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        self.personalization_config(*self.k_shots.first().expect("non-empty"))?
            .validate()
    }

    pub fn temperature_setting(&self) -> Temperature {
        match self.init {
            InitKind::Adaptive => Temperature::Finite(self.temperature),
            InitKind::Uniform => Temperature::Uniform,
            InitKind::BestFit => Temperature::BestFit,
        }
    }

    pub fn personalization_config(&self, shots: usize) -> Result<PersonalizationConfig> {
        let cfg = PersonalizationConfig {
            temperature: self.temperature_setting(),
            start_lr: self.start_lr,
            end_lr: self.end_lr,
            batch_size: self.batch_size,
            steps: self.steps,
            loss_kind: self.loss,
            shots,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn method(&self) -> Method {
        match self.layer_mode {
            LayerMode::Layerwise => Method::Coefficients,
            LayerMode::Agnostic => Method::CoefficientsLayerAgnostic,
        }
    }

    pub fn protocol_config(&self, shots: usize, method: Method) -> Result<ProtocolConfig> {
        Ok(ProtocolConfig {
            trials: self.trials,
            personalization: self.personalization_config(shots)?,
            method,
            n_tasks: None,
            eval_after: self.eval_after.clone(),
            loss_curve_stride: self.loss_curve_stride,
        })
    }
}

fn default_architecture() -> ArchitectureDescriptor {
    let mut d = ArchitectureDescriptor::new(48, vec![32, 32, 32], 16);
    d.dropout_rate = 0.1;
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub universe: UniverseConfig,
    pub architecture: ArchitectureDescriptor,
    pub phase1: Phase1Config,
    pub users: UserGenConfig,
    pub personalize: PersonalizeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            universe: UniverseConfig::default(),
            architecture: default_architecture(),
            phase1: Phase1Config::default(),
            users: UserGenConfig::default(),
            personalize: PersonalizeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        self.architecture.validate()?;
        if self.architecture.input_dim != self.universe.feature_dim {
            return Err(Error::Config(format!(
                "architecture input_dim {} must equal universe feature_dim {}",
                self.architecture.input_dim, self.universe.feature_dim
            )));
        }
        self.phase1.validate()?;
        self.users.validate()?;
        self.personalize.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical snapshot used in reports and for the config digest.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
