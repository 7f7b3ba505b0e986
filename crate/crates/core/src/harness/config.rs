use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, Plant};
use crate::error::{Error, Result};
use crate::gp::FitSettings;
use crate::inference::{InferenceMethod, ModelUncertainty};
use crate::optimizer::OptimSettings;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    #[default]
    Rbf,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub variant: PolicyVariant,
    pub n_basis: usize,
    /// RBF targets start from `N(0, (target_scale·u_max)²)`.
    pub target_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { variant: PolicyVariant::Rbf, n_basis: 50, target_scale: 0.1 }
    }
}

/// GP hyperparameter fitting inside the learning loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelFitConfig {
    /// Perturbed restarts for the first fit.
    pub restarts_first: usize,
    /// Perturbed restarts for later fits, which also start from the previous hyperparameters.
    pub restarts: usize,
    pub optim: OptimSettings,
}

impl Default for ModelFitConfig {
    fn default() -> Self {
        let d = FitSettings::default();
        ModelFitConfig { restarts_first: d.restarts, restarts: 0, optim: d.optim }
    }
}

impl ModelFitConfig {
    pub fn settings(&self, first: bool, seed: u64) -> FitSettings {
        FitSettings { restarts: if first { self.restarts_first } else { self.restarts }, optim: self.optim.clone(), seed }
    }
}

fn default_test_rollouts() -> usize {
    20
}

fn default_success_count() -> usize {
    18
}

fn default_reinits() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub env: EnvSpec,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub inference: InferenceMethod,
    #[serde(default)]
    pub model: ModelUncertainty,
    /// Learned episodes after the initial random one.
    pub episodes: usize,
    #[serde(default = "default_test_rollouts")]
    pub test_rollouts: usize,
    /// Test rollouts that must succeed for an episode to count as solved.
    #[serde(default = "default_success_count")]
    pub success_count: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub policy_optim: OptimSettings,
    #[serde(default)]
    pub gp_fit: ModelFitConfig,
    #[serde(default)]
    pub ucb_kappa: f64,
    /// Policy re-initializations allowed per episode when the predicted rollout diverges.
    #[serde(default = "default_reinits")]
    pub max_policy_reinits: usize,
    /// Stop a seed once it reaches the success criterion.
    #[serde(default)]
    pub stop_on_success: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn cartpole() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "cartpole".into(),
            env: EnvSpec::cartpole(),
            policy: PolicyConfig::default(),
            inference: InferenceMethod::MomentMatch,
            model: ModelUncertainty::Bayesian,
            episodes: 15,
            test_rollouts: default_test_rollouts(),
            success_count: default_success_count(),
            seeds: (1..=8).collect(),
            policy_optim: OptimSettings::default(),
            gp_fit: ModelFitConfig::default(),
            ucb_kappa: 0.0,
            max_policy_reinits: default_reinits(),
            stop_on_success: true,
            output_dir: None,
        }
    }

    pub fn double_pendulum() -> Self {
        ExperimentConfig {
            name: "double_pendulum".into(),
            env: EnvSpec::double_pendulum(),
            policy: PolicyConfig { n_basis: 100, ..PolicyConfig::default() },
            episodes: 30,
            ..Self::cartpole()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.env.validate()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.success_count > self.test_rollouts {
            return Err(Error::Config("success_count exceeds test_rollouts".into()));
        }
        if self.policy.variant == PolicyVariant::Rbf && self.policy.n_basis == 0 {
            return Err(Error::Config("an RBF policy needs at least one basis function".into()));
        }
        if !(self.ucb_kappa.is_finite()) {
            return Err(Error::Config("ucb_kappa must be finite".into()));
        }
        self.policy_optim.validate()?;
        self.gp_fit.optim.validate()
    }

    /// Short task label used in file names.
    pub fn task(&self) -> &'static str {
        match self.env.plant {
            Plant::Cartpole { .. } => "cartpole",
            Plant::DoublePendulum { .. } => "double_pendulum",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        for cfg in [ExperimentConfig::cartpole(), ExperimentConfig::double_pendulum()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        }
        let minimal = r#"
            schema_version = 1
            name = "m"
            episodes = 2
            seeds = [3]
            [env]
            dt_control = 0.1
            noise_var = [1e-4, 1e-4, 1e-4, 1e-4]
            u_max = [10.0]
            init_mean = [0.0, 0.0, 0.0, 0.0]
            init_var = [0.01, 0.01, 0.01, 0.01]
            target = [0.0, 0.5]
            sigma_c = 0.25
            horizon_seconds = 2.5
            angle_dims = [2]
            [env.plant]
            variant = "cartpole"
            cart_mass = 0.5
            pole_mass = 0.5
            pole_length = 0.5
            friction = 0.1
            gravity = 9.82
        "#;
        let cfg = ExperimentConfig::from_toml(minimal).unwrap();
        assert_eq!(cfg.env, EnvSpec::cartpole());
        assert_eq!(cfg.test_rollouts, 20);
        assert_eq!(cfg.inference, InferenceMethod::MomentMatch);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ExperimentConfig::cartpole();
        cfg.episodes = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::cartpole();
        cfg.schema_version = 7;
        assert!(cfg.validate().is_err());
        let text = ExperimentConfig::cartpole().to_toml().unwrap().replace("episodes = 15", "episodes = 15\nunknown_key = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
