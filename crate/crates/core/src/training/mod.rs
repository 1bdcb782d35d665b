//! Multi-token loss, per-head backward schedules and the optimiser recipe.

mod loss;
mod optim;
mod trainer;

pub use loss::{compute_gradients, multi_token_loss, LossReport, IGNORE_INDEX};
pub use optim::{adam_update, clip_gradients, lr_at, AdamState};
pub use trainer::{BatchSource, MetricsLog, StepReport, Trainer};

use std::fmt;
use std::str::FromStr;

use crate::error::{MtpError, Result};

/// How the per-head losses are backpropagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// All heads' logits are materialised in one graph and backpropagated together.
    NaiveJoint,
    /// Trunk forward once, then forward+backward one head at a time, freeing
    /// its logits before the next head; trunk backward once at the end.
    SequentialHeads,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::NaiveJoint => "naive_joint",
            Schedule::SequentialHeads => "sequential_heads",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schedule {
    type Err = MtpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive_joint" => Ok(Schedule::NaiveJoint),
            "sequential_heads" => Ok(Schedule::SequentialHeads),
            other => Err(MtpError::Config(format!(
                "unknown schedule '{other}' (expected naive_joint or sequential_heads)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Tokens per optimiser step; rows = batch_tokens / sequence length.
    pub batch_tokens: usize,
    pub steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    /// Final learning rate as a fraction of `peak_lr`.
    pub decay_ratio: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_tokens: 2048,
            steps: 1000,
            warmup_steps: 50,
            peak_lr: 2e-3,
            decay_ratio: 0.03,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            clip_norm: 1.0,
            seed: 0,
            schedule: Schedule::SequentialHeads,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.warmup_steps >= self.steps {
            problems.push(format!(
                "warmup_steps {} must be < steps {}",
                self.warmup_steps, self.steps
            ));
        }
        if !(self.decay_ratio > 0.0 && self.decay_ratio <= 1.0) {
            problems.push(format!("decay_ratio {} must lie in (0, 1]", self.decay_ratio));
        }
        if !(self.peak_lr > 0.0) {
            problems.push(format!("peak_lr {} must be positive", self.peak_lr));
        }
        if !(self.clip_norm > 0.0) {
            problems.push(format!("clip_norm {} must be positive", self.clip_norm));
        }
        if self.batch_tokens == 0 {
            problems.push("batch_tokens must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MtpError::Config(problems.join("; ")))
        }
    }
}
