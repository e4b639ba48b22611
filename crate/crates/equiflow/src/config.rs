//! Run configuration, read from TOML.

use std::path::Path;

use equiflow_core::group::GroupSpec;
use equiflow_core::nn::{DenseSpec, EquivariantSpec, Topology};
use equiflow_core::sampler::SamplerConfig;
use equiflow_core::toybench::{Env, EnvKind};
use equiflow_core::train::{FaboSettings, LambdaSchedule, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Equivariant,
    /// Unconstrained baseline sized to match the equivariant parameter count.
    Dense,
}

/// Every hyperparameter of a run. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Order of the rotation group.
    pub u: u32,
    /// Chunk length.
    pub n: usize,
    /// Executed prefix of each chunk.
    pub n1: usize,
    pub m_candidates: usize,
    pub nfe: usize,
    pub reset_period: u64,
    /// Observation history length.
    pub history: usize,
    pub dt: f64,
    pub lambda_variant: String,
    /// Divide the penalty by `dt²`.
    pub rescale_fabo: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub demos: usize,
    /// Std of the exploration noise on executed demo actions, in action-scale units.
    pub demo_noise: f64,
    pub arch: Arch,
    pub obs_channels: usize,
    pub action_channels: usize,
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
    /// Episodes per evaluation; 0 disables per-epoch evaluation.
    pub eval_episodes: usize,
    /// Evaluate every this many epochs (and after the last).
    pub eval_every: usize,
    pub smoothness_timesteps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "reach2d".into(),
            u: 8,
            n: 16,
            n1: 8,
            m_candidates: 5,
            nfe: 5,
            reset_period: 10,
            history: 2,
            dt: 0.05,
            lambda_variant: "(1-t)^2".into(),
            rescale_fabo: true,
            lr: 1e-3,
            weight_decay: 1e-6,
            batch: 64,
            epochs: 100,
            seed: 0,
            demos: 50,
            demo_noise: 0.3,
            arch: Arch::Equivariant,
            obs_channels: 8,
            action_channels: 8,
            hidden: vec![16, 32, 32],
            time_freqs: 4,
            eval_episodes: 0,
            eval_every: 10,
            smoothness_timesteps: 100,
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{name}`: {msg}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        EnvKind::parse(&self.env).map_err(|e| field("env", e))?;
        if self.u < 2 {
            return Err(field("u", "group order must be at least 2"));
        }
        if self.n == 0 {
            return Err(field("n", "must be ≥ 1"));
        }
        if self.n1 == 0 || self.n1 > self.n {
            return Err(field("n1", format!("must satisfy 1 ≤ n1 ≤ n = {}", self.n)));
        }
        if self.m_candidates == 0 {
            return Err(field("m_candidates", "must be ≥ 1"));
        }
        if self.nfe == 0 {
            return Err(field("nfe", "must be ≥ 1"));
        }
        if self.reset_period == 0 {
            return Err(field("reset_period", "must be ≥ 1"));
        }
        if self.history == 0 {
            return Err(field("history", "must be ≥ 1"));
        }
        if !(self.dt > 0.0 && self.dt < 1.0) {
            return Err(field("dt", "must lie in (0, 1)"));
        }
        LambdaSchedule::parse(&self.lambda_variant).map_err(|e| field("lambda_variant", e))?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(field("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(field("weight_decay", "must be ≥ 0"));
        }
        if self.batch == 0 {
            return Err(field("batch", "must be ≥ 1"));
        }
        if self.demos == 0 {
            return Err(field("demos", "must be ≥ 1"));
        }
        if !(self.demo_noise >= 0.0 && self.demo_noise.is_finite()) {
            return Err(field("demo_noise", "must be finite and ≥ 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(field("hidden", "needs at least one layer, all widths ≥ 1"));
        }
        if self.obs_channels == 0 || self.action_channels == 0 {
            return Err(field("obs_channels", "encoder widths must be ≥ 1"));
        }
        if self.eval_every == 0 {
            return Err(field("eval_every", "must be ≥ 1"));
        }
        if self.smoothness_timesteps < 2 {
            return Err(field("smoothness_timesteps", "must be ≥ 2"));
        }
        Ok(())
    }

    pub fn group(&self) -> GroupSpec {
        GroupSpec::new(self.u).expect("validated")
    }

    pub fn env(&self) -> Env {
        Env::new(EnvKind::parse(&self.env).expect("validated"))
    }

    pub fn lambda(&self) -> LambdaSchedule {
        LambdaSchedule::parse(&self.lambda_variant).expect("validated")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch,
            epochs: self.epochs,
            fabo: FaboSettings { lambda: self.lambda(), dt: self.dt, rescale: self.rescale_fabo },
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            nfe: self.nfe,
            m_candidates: self.m_candidates,
            n: self.n,
            n1: self.n1,
            reset_period: self.reset_period,
            seed: self.seed,
        }
    }

    pub fn equivariant_spec(&self) -> EquivariantSpec {
        let spec = self.env().spec(self.group());
        EquivariantSpec {
            obs_rep: spec.history_rep(self.history),
            action_rep: spec.chunk_rep(self.n),
            obs_channels: self.obs_channels,
            action_channels: self.action_channels,
            hidden: self.hidden.clone(),
            time_freqs: self.time_freqs,
        }
    }

    /// Network topology; the dense baseline is matched to the equivariant size.
    pub fn topology(&self) -> Topology {
        let eq = self.equivariant_spec();
        match self.arch {
            Arch::Equivariant => Topology::Equivariant(eq),
            Arch::Dense => {
                let target = equiflow_core::nn::Model::zeros(Topology::Equivariant(eq.clone()))
                    .map(|m| equiflow_core::nn::Network::num_params(&m))
                    .unwrap_or(0);
                Topology::Dense(DenseSpec::matched(
                    eq.obs_rep.total_dim(),
                    eq.action_rep.total_dim(),
                    self.hidden.len(),
                    self.time_freqs,
                    target,
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse("n = 4\nn1 = 6\n").unwrap_err();
        assert!(e.to_string().contains("`n1`"), "{e}");
        let e = RunConfig::parse("lambda_variant = \"t^3\"").unwrap_err();
        assert!(e.to_string().contains("lambda_variant"));
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("env = \"cartpole\"").is_err());
    }

    #[test]
    fn dense_topology_is_size_matched() {
        let cfg = RunConfig { arch: Arch::Dense, hidden: vec![8, 8], ..Default::default() };
        let eq = equiflow_core::nn::Model::zeros(Topology::Equivariant(cfg.equivariant_spec())).unwrap();
        let de = equiflow_core::nn::Model::zeros(cfg.topology()).unwrap();
        use equiflow_core::nn::Network;
        let (a, b) = (eq.num_params() as f64, de.num_params() as f64);
        assert!((a - b).abs() / a < 0.25, "{a} vs {b}");
    }
}
