//! Run configuration: a TOML file merged over the defaults, then flag
//! overrides. Every key of the file must exist in the defaults.

use std::path::{Path, PathBuf};

use safenav::harness::{EpisodeSettings, Policy};
use safenav::policy::{NominalParams, PolicyParams, RewardParams};
use safenav::refiner::AlmParams;
use safenav::sim::{ScenarioConfig, WorldParams};
use safenav::training::TrainConfig;
use safenav::world_model::{FlowPredictor, Predictor, StaticModel};
use safenav::CbfParams;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Static,
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset names or paths to scenario TOML files.
    pub scenarios: Vec<String>,
    pub episodes: usize,
    pub seed: u64,
    pub refine: bool,
    pub model: ModelKind,
    /// `nominal`, `random`, or a path to a policy JSON written by `train`.
    pub policy: String,
    pub out: PathBuf,
    pub world: WorldParams<f64>,
    pub observation: safenav::observation::ObservationParams<f64>,
    pub cbf: CbfParams<f64>,
    pub alm: AlmParams<f64>,
    pub reward: RewardParams,
    pub nominal: NominalParams,
    pub flow: FlowPredictor<f64>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: vec!["sparse_4".into()],
            episodes: 1,
            seed: 0,
            refine: true,
            model: ModelKind::Flow,
            policy: "nominal".into(),
            out: PathBuf::from("out"),
            world: WorldParams::default(),
            observation: Default::default(),
            cbf: CbfParams::default(),
            alm: AlmParams::default(),
            reward: RewardParams::default(),
            nominal: NominalParams::default(),
            flow: FlowPredictor::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenarios: Vec<String>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub refine: Option<bool>,
    pub model: Option<ModelKind>,
    pub out: Option<PathBuf>,
    pub policy: Option<String>,
}

/// Keys whose default is absent, so they do not appear in the serialized defaults.
const OPTIONAL_KEYS: [&str; 1] = ["alm.max_evaluations"];

/// Copies `file` over `base`, rejecting keys `base` does not have. Integers
/// are accepted where the default is a float.
fn merge(base: &mut Value, file: Value, path: &str) -> Result<(), CliError> {
    match (base, file) {
        (Value::Table(b), Value::Table(f)) => {
            for (k, v) in f {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None if OPTIONAL_KEYS.contains(&here.as_str()) => {
                        b.insert(k, v);
                    }
                    None => return Err(CliError::Validation(format!("unknown config key `{here}`"))),
                }
            }
            Ok(())
        }
        (b @ Value::Float(_), Value::Integer(i)) => {
            *b = Value::Float(i as f64);
            Ok(())
        }
        (b, v) => {
            if std::mem::discriminant(b) != std::mem::discriminant(&v) {
                return Err(CliError::Validation(format!(
                    "config key `{path}`: expected {}, got {}",
                    b.type_str(),
                    v.type_str()
                )));
            }
            *b = v;
            Ok(())
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let file: Value = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let mut base = Value::try_from(Self::default()).map_err(|e| CliError::Runtime(e.to_string()))?;
        merge(&mut base, file, "")?;
        base.try_into()
            .map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        if !overrides.scenarios.is_empty() {
            cfg.scenarios = overrides.scenarios.clone();
        }
        cfg.episodes = overrides.episodes.unwrap_or(cfg.episodes);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.refine = overrides.refine.unwrap_or(cfg.refine);
        cfg.model = overrides.model.unwrap_or(cfg.model);
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(p) = &overrides.policy {
            cfg.policy = p.clone();
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }

    pub fn predictor(&self) -> Predictor<f64> {
        match self.model {
            ModelKind::Static => Predictor::Static(StaticModel {
                motion: self.flow.motion,
            }),
            ModelKind::Flow => Predictor::Flow(self.flow),
        }
    }

    pub fn settings(&self) -> EpisodeSettings {
        EpisodeSettings {
            refine: self.refine,
            predictor: self.predictor(),
            cbf: self.cbf,
            alm: self.alm,
            observation: self.observation,
            reward: self.reward,
            step_cap: None,
            transition_stride: 0,
        }
    }

    pub fn scenario_configs(&self) -> Result<Vec<ScenarioConfig>, CliError> {
        self.scenarios
            .iter()
            .map(|s| match ScenarioConfig::preset(s, self.seed) {
                Some(c) => Ok(c),
                None => {
                    let text = std::fs::read_to_string(s).map_err(|e| {
                        CliError::Validation(format!(
                            "scenario `{s}` is neither a preset ({}) nor a readable file: {e}",
                            ScenarioConfig::PRESETS.join(", ")
                        ))
                    })?;
                    ScenarioConfig::from_toml_str(&text).map_err(CliError::validation)
                }
            })
            .collect()
    }

    pub fn policy(&self) -> Result<Policy, CliError> {
        match self.policy.as_str() {
            "nominal" => Ok(Policy::Nominal(NominalParams {
                bounds: self.world.action_bounds,
                ..self.nominal
            })),
            "random" => Ok(Policy::Random),
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("cannot read policy {path}: {e}")))?;
                let params: PolicyParams =
                    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("policy {path}: {e}")))?;
                params.validate().map_err(CliError::validation)?;
                Ok(Policy::Mlp(params))
            }
        }
    }

    /// Checks everything a run needs before any output is written.
    pub fn validate(&self) -> Result<(Vec<ScenarioConfig>, Policy), CliError> {
        if self.scenarios.is_empty() {
            return Err(CliError::Validation("at least one scenario is required".into()));
        }
        if self.episodes == 0 {
            return Err(CliError::Validation("episodes must be >= 1".into()));
        }
        self.world.validate().map_err(CliError::validation)?;
        self.settings().validate().map_err(CliError::validation)?;
        self.flow.flow.validate().map_err(CliError::validation)?;
        self.train.validate().map_err(CliError::validation)?;
        let scenarios = self.scenario_configs()?;
        for s in &scenarios {
            safenav::harness::scenario_world(s, self.seed, &self.world).map_err(CliError::validation)?;
        }
        Ok((scenarios, self.policy()?))
    }
}
