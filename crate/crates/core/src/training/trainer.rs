use std::fmt::Write as _;
use std::time::Instant;

use super::{adam_update, clip_gradients, compute_gradients, lr_at, AdamState, LossReport, TrainConfig};
use crate::error::Result;
use crate::model::{MultiTokenModel, TokenBatch};

/// Supplies training batches. Implementations must be a pure function of
/// `(step, rows, seq_len)` and their own seed so that runs resume exactly.
pub trait BatchSource {
    fn batch(&self, step: u64, rows: usize, seq_len: usize) -> Result<TokenBatch>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Number of optimiser steps completed after this one.
    pub step: u64,
    pub lr: f64,
    pub loss: LossReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_factor: f64,
    pub wall_ms: f64,
}

/// Model plus optimiser state; the unit that checkpoints save and restore.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MultiTokenModel,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
    pub seq_len: usize,
}

impl Trainer {
    /// Training rows span the full context window.
    pub fn new(model: MultiTokenModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params);
        let seq_len = model.config().context_len;
        Ok(Self {
            model,
            config,
            adam,
            step: 0,
            seq_len,
        })
    }

    pub fn rows_per_batch(&self) -> usize {
        (self.config.batch_tokens / self.seq_len).max(1)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// One optimiser step: gradients under the configured schedule, global
    /// clipping, then Adam at the learning rate for the step being completed.
    pub fn train_step(&mut self, source: &dyn BatchSource) -> Result<StepReport> {
        let started = Instant::now();
        let batch = source.batch(self.step, self.rows_per_batch(), self.seq_len)?;
        self.model.params.zero_grads();
        let loss = compute_gradients(&mut self.model, &batch, self.config.schedule)?;
        let grad_norm = self.model.params.grad_norm();
        let clip_factor = clip_gradients(&mut self.model.params, self.config.clip_norm);
        let lr = lr_at(self.step + 1, &self.config);
        adam_update(&mut self.model.params, &mut self.adam, lr, &self.config)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            lr,
            loss,
            grad_norm,
            clip_factor,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs until `until` steps are complete (capped at `config.steps`),
    /// logging every `log_every`-th step and the last one.
    pub fn run_until(
        &mut self,
        source: &dyn BatchSource,
        until: u64,
        log: &mut MetricsLog,
        log_every: u64,
    ) -> Result<()> {
        let until = until.min(self.config.steps);
        while self.step < until {
            let report = self.train_step(source)?;
            if report.step % log_every.max(1) == 0 || report.step == until {
                log::info!(
                    "step {} lr {:.3e} loss {:.4} grad_norm {:.3}",
                    report.step,
                    report.lr,
                    report.loss.total,
                    report.grad_norm
                );
                log.push(report);
            }
        }
        Ok(())
    }
}

/// Per-step training metrics, rendered as CSV.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<StepReport>,
}

impl MetricsLog {
    pub fn push(&mut self, report: StepReport) {
        self.rows.push(report);
    }

    /// `step,lr,loss,loss_h1..loss_hn,grad_norm,wall_ms`; floats use Rust's
    /// shortest round-trip formatting so equal runs give equal text (except
    /// for the wall-clock column).
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.loss.per_head.len());
        let mut out = String::from("step,lr,loss");
        for i in 1..=n {
            let _ = write!(out, ",loss_h{i}");
        }
        out.push_str(",grad_norm,wall_ms\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.step, r.lr, r.loss.total);
            for h in &r.loss.per_head {
                let _ = write!(out, ",{h}");
            }
            let _ = writeln!(out, ",{},{:.3}", r.grad_norm, r.wall_ms);
        }
        out
    }

    /// Mean of `window` consecutive losses, one value per full window position.
    pub fn smoothed_losses(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.rows.iter().map(|r| r.loss.total).collect();
        if window == 0 || losses.len() < window {
            return Vec::new();
        }
        losses
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }
}
