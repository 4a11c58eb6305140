//! KL-regularized double-Q learning over binned pixel actions.

mod policy;
mod qnet;
mod replay;
mod train;

pub use policy::{
    batch_input, candidates, kl_to_prior, loss_and_grad, masked_argmax, network_input, policy_distribution,
    select_action, td_loss_and_grad, td_target, LossConfig, LossOutput,
};
pub use qnet::{backward, forward, Architecture, CheckpointMeta, ForwardCache, QFunction, QNET_SCHEMA};
pub use replay::{EncodedState, ReplayBuffer, Transition};
pub use train::{encode, evaluate, read_log, train, EvalReport, TrainOptions, TrainOutcome, TrainSetup};

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affordance::FeatureSpec;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_THRESHOLD, DEFAULT_WINDOW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DDQN")]
    Ddqn,
    #[serde(rename = "DDQN_P")]
    DdqnP,
    #[serde(rename = "DDQN_A")]
    DdqnA,
    #[serde(rename = "DDQN_AP")]
    DdqnAp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ddqn, Variant::DdqnP, Variant::DdqnA, Variant::DdqnAp];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ddqn => "DDQN",
            Variant::DdqnP => "DDQN_P",
            Variant::DdqnA => "DDQN_A",
            Variant::DdqnAp => "DDQN_AP",
        }
    }

    pub fn uses_prior(&self) -> bool {
        matches!(self, Variant::DdqnP | Variant::DdqnAp)
    }

    pub fn uses_affordance(&self) -> bool {
        matches!(self, Variant::DdqnA | Variant::DdqnAp)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DDQN" => Ok(Variant::Ddqn),
            "DDQN_P" => Ok(Variant::DdqnP),
            "DDQN_A" => Ok(Variant::DdqnA),
            "DDQN_AP" => Ok(Variant::DdqnAp),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

pub const TRAINER_SCHEMA: &str = "trainer-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub schema: String,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::epsilon_start")]
    pub epsilon_start: f64,
    #[serde(default = "defaults::epsilon_end")]
    pub epsilon_end: f64,
    /// Linear decay length in global steps; 60% of `total_steps` when absent.
    #[serde(default)]
    pub epsilon_decay_steps: Option<u64>,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    /// Target network sync period, in updates.
    #[serde(default = "defaults::target_sync")]
    pub target_sync: u64,
    /// Global steps between updates.
    #[serde(default = "defaults::one")]
    pub train_every: u64,
    /// Stored transitions required before the first update; at least one batch.
    #[serde(default)]
    pub warmup: usize,
    /// Gradient L2-norm clip; none when absent.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub feature: FeatureSpec,
    #[serde(default = "defaults::variant")]
    pub variant: Variant,
    #[serde(default = "defaults::env_count")]
    pub env_count: usize,
    #[serde(default = "defaults::total_steps")]
    pub total_steps: u64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::window")]
    pub success_window: usize,
    #[serde(default = "defaults::threshold")]
    pub success_threshold: f64,
    /// End the run once the windowed success reaches the threshold.
    #[serde(default)]
    pub stop_at_threshold: bool,
}

mod defaults {
    use super::Variant;

    pub fn gamma() -> f64 {
        0.99
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn tau() -> f64 {
        1.0
    }
    pub fn epsilon_start() -> f64 {
        1.0
    }
    pub fn epsilon_end() -> f64 {
        0.05
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn buffer_capacity() -> usize {
        20_000
    }
    pub fn target_sync() -> u64 {
        200
    }
    pub fn one() -> u64 {
        1
    }
    pub fn hidden() -> Vec<usize> {
        vec![128, 128]
    }
    pub fn variant() -> Variant {
        Variant::DdqnAp
    }
    pub fn env_count() -> usize {
        4
    }
    pub fn total_steps() -> u64 {
        20_000
    }
    pub fn seeds() -> Vec<u64> {
        vec![0, 1, 2, 3, 4]
    }
    pub fn window() -> usize {
        super::DEFAULT_WINDOW
    }
    pub fn threshold() -> f64 {
        super::DEFAULT_THRESHOLD
    }
}

impl Default for TrainerConfig {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({ "schema": TRAINER_SCHEMA })).expect("defaults parse")
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != TRAINER_SCHEMA {
            return Err(Error::Config(format!("expected schema {TRAINER_SCHEMA}, found {}", self.schema)));
        }
        let checks = [
            (self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]"),
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be finite and >= 0"),
            (self.tau > 0.0 && self.tau.is_finite(), "tau must be positive"),
            (
                (0.0..=1.0).contains(&self.epsilon_start) && (0.0..=1.0).contains(&self.epsilon_end),
                "epsilon values must lie in [0, 1]",
            ),
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.buffer_capacity >= self.batch_size, "buffer_capacity must hold a batch"),
            (self.target_sync > 0, "target_sync must be positive"),
            (self.train_every > 0, "train_every must be positive"),
            (self.env_count > 0, "env_count must be positive"),
            (!self.hidden.contains(&0), "hidden widths must be positive"),
            (self.success_window > 0, "success_window must be positive"),
            (self.max_grad_norm.is_none_or(|g| g > 0.0), "max_grad_norm must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        self.feature.validate()
    }

    /// KL weight actually applied: zero for variants without a prior.
    pub fn effective_lambda(&self, variant: Variant) -> f64 {
        if variant.uses_prior() {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn epsilon_at(&self, global_step: u64) -> f64 {
        let decay = self
            .epsilon_decay_steps
            .unwrap_or((self.total_steps as f64 * 0.6).round() as u64);
        if decay == 0 {
            return self.epsilon_end;
        }
        let frac = (global_step as f64 / decay as f64).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TrainerConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
