//! Run configuration: one TOML file with a section per subsystem, plus
//! dotted-path command-line overrides.
//!
//! All randomness in a run flows from the single top-level `seed`:
//! [`RunConfig::finalize`] overwrites every per-section seed with a value
//! derived from it and a fixed role tag, so two runs with equal files and
//! seeds are identical and sections never share a stream. Unknown keys
//! anywhere in the file are rejected by name.

use crate::dynamics::{Actuation, ModelParams};
use crate::env::EnvConfig;
use crate::env::RewardParams;
use crate::eval::{PerturbationKind, PerturbationSpec, SuccessCriteria};
use crate::lqr::LqrWeights;
use crate::roa::RoaConfig;
use crate::sac::SacConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {arg:?}: {msg}")]
    BadOverride { arg: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Role tags for seed derivation; each consumer gets its own stream.
pub mod seed_tags {
    pub const ENV: u64 = 1;
    pub const AGENT_INIT: u64 = 2;
    pub const TRAINER: u64 = 3;
    pub const ROA: u64 = 4;
    pub const EVAL_RESET: u64 = 5;
    pub const ROBUSTNESS: u64 = 6;
}

/// Mix the global seed with a role tag into an independent stream seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    crate::roa::sample_seed(seed, tag, 0)
}

/// Robustness-sweep settings as they appear in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    /// Rollout horizon per perturbed run (s).
    pub horizon_s: f64,
    pub parallel: bool,
    pub specs: Vec<PerturbationSpec>,
}

/// Evaluation settings: scoring thresholds and rollout geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub criteria: SuccessCriteria,
    /// Rollout horizon for the performance evaluation (s).
    pub horizon_s: f64,
    /// Execution-time control period (s).
    pub dt_control: f64,
    pub robustness: RobustnessSection,
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The one seed everything derives from.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelParams,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub lqr: LqrWeights,
    pub roa: RoaConfig,
    pub eval: EvalSection,
}

fn identity4() -> Vec<Vec<f64>> {
    (0..4)
        .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl RunConfig {
    /// Built-in pendubot run: published reward and balance weights; the
    /// region matrix and radius are placeholders until a checkpointed
    /// estimate replaces them.
    pub fn pendubot() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: ModelParams::default_pendubot(),
            env: EnvConfig::pendubot(RewardParams::pendubot(identity4(), 0.0)),
            sac: SacConfig::default(),
            lqr: LqrWeights {
                q: [1.92, 1.92, 0.3, 0.3],
                r: 0.82,
            },
            roa: RoaConfig::default(),
            eval: EvalSection {
                criteria: SuccessCriteria::default(),
                horizon_s: 10.0,
                dt_control: 0.002,
                robustness: RobustnessSection {
                    horizon_s: 10.0,
                    parallel: true,
                    specs: PerturbationKind::ALL
                        .iter()
                        .map(|&k| PerturbationSpec::default_for(k, 0))
                        .collect(),
                },
            },
        }
    }

    /// Built-in acrobot run.
    pub fn acrobot() -> Self {
        Self {
            model: ModelParams::default_acrobot(),
            env: EnvConfig::acrobot(RewardParams::acrobot(identity4(), 0.0)),
            lqr: LqrWeights {
                q: [0.97, 0.93, 0.39, 0.26],
                r: 0.11,
            },
            ..Self::pendubot()
        }
    }

    /// Derive all per-section seeds from the global one.
    pub fn finalize(&mut self) {
        self.sac.seed = derive_seed(self.seed, seed_tags::TRAINER);
        self.roa.seed = derive_seed(self.seed, seed_tags::ROA);
        let global = self.seed;
        for (i, spec) in self.eval.robustness.specs.iter_mut().enumerate() {
            spec.seed = derive_seed(global, seed_tags::ROBUSTNESS + i as u64);
        }
    }

    /// Validate every section and their cross-couplings.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        self.env.validate().map_err(|e| invalid(e.to_string()))?;
        self.sac.validate().map_err(|e| invalid(e.to_string()))?;
        self.roa.validate().map_err(|e| invalid(e.to_string()))?;
        self.eval
            .criteria
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if !(self.eval.horizon_s.is_finite() && self.eval.horizon_s > 0.0) {
            return Err(invalid("eval.horizon_s must be positive".into()));
        }
        if !(self.eval.dt_control.is_finite() && self.eval.dt_control > 0.0) {
            return Err(invalid("eval.dt_control must be positive".into()));
        }
        if !(self.eval.robustness.horizon_s.is_finite() && self.eval.robustness.horizon_s > 0.0)
        {
            return Err(invalid("eval.robustness.horizon_s must be positive".into()));
        }
        for spec in &self.eval.robustness.specs {
            spec.validate().map_err(|e| invalid(e.to_string()))?;
        }
        for kind in PerturbationKind::ALL {
            if !self
                .eval
                .robustness
                .specs
                .iter()
                .any(|s| s.kind == kind)
            {
                return Err(invalid(format!(
                    "eval.robustness.specs missing family {}",
                    kind.name()
                )));
            }
        }
        if self.env.robot != self.model.actuation {
            return Err(invalid(format!(
                "env.robot {:?} does not match model actuation {:?}",
                self.env.robot, self.model.actuation
            )));
        }
        if self.env.tau_max != self.model.tau_max {
            return Err(invalid(format!(
                "env.tau_max {} does not match model.tau_max {}",
                self.env.tau_max, self.model.tau_max
            )));
        }
        if self.model.actuation == Actuation::Full {
            return Err(invalid(
                "model.actuation must be pendubot or acrobot".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Load a config file (or the built-in pendubot run when `path` is None),
/// apply `--set section.key=value` overrides, derive seeds, validate.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let value: toml::Value = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
        None => toml::Value::try_from(RunConfig::pendubot())
            .map_err(|e| ConfigError::Parse(e.to_string()))?,
    };
    finish_config(value, overrides)
}

/// Parse config text, apply overrides, derive seeds, validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let value: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    finish_config(value, overrides)
}

fn finish_config(
    mut value: toml::Value,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    for arg in overrides {
        apply_override(&mut value, arg)?;
    }
    let mut cfg: RunConfig = value
        .try_into()
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.finalize();
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `section.key=value` override in place. The dotted path must
/// address an existing key; the value parses as a TOML literal, falling
/// back to a plain string.
fn apply_override(value: &mut toml::Value, arg: &str) -> Result<(), ConfigError> {
    let bad = |msg: &str| ConfigError::BadOverride {
        arg: arg.to_string(),
        msg: msg.to_string(),
    };
    let (path, literal) = arg.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty path segment"));
    }
    let mut node = &mut *value;
    for (i, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| bad(&format!("{} is not a table", segments[..i].join("."))))?;
        node = table
            .get_mut(*seg)
            .ok_or_else(|| bad(&format!("no such key {}", segments[..=i].join("."))))?;
    }
    let parsed: toml::Value = match format!("v = {literal}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(literal.to_string()),
    };
    *node = parsed;
    Ok(())
}
