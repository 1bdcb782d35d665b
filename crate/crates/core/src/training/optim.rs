use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{MtpError, Result};
use crate::model::ParamStore;

/// Linear warmup to `peak_lr`, then cosine decay to `decay_ratio · peak_lr`
/// at `steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let peak = cfg.peak_lr;
    if step < cfg.warmup_steps {
        return peak * step as f64 / cfg.warmup_steps as f64;
    }
    let end = cfg.decay_ratio * peak;
    let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1);
    let u = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
    end + 0.5 * (peak - end) * (1.0 + (PI * u).cos())
}

/// Scales all gradients so their global L2 norm is at most `clip_norm`.
/// Returns the factor applied (1.0 when nothing changed).
pub fn clip_gradients(params: &mut ParamStore, clip_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm <= clip_norm {
        return 1.0;
    }
    let factor = clip_norm / norm;
    for p in params.iter_mut() {
        if let Some(g) = p.tensor.grad() {
            let scaled: Vec<f64> = g.iter().map(|v| v * factor).collect();
            p.tensor.grad_mut().copy_from_slice(&scaled);
        }
    }
    factor
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay
/// (`p ← p − lr·wd·p`, applied only to parameters flagged for decay).
pub fn adam_update(
    params: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.m.len() != params.len()
        || params
            .iter()
            .zip(&state.m)
            .any(|(p, m)| p.tensor.len() != m.len())
    {
        return Err(MtpError::Contract(
            "optimizer state does not match parameter shapes".into(),
        ));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let decay = if p.decay { lr * cfg.weight_decay } else { 0.0 };
        let grad = p.tensor.grad().map(<[f64]>::to_vec);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let values = p.tensor.values_mut();
        for j in 0..values.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            values[j] -= decay * values[j];
            values[j] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}
