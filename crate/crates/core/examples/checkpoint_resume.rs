//! Interrupt a training run, save a checkpoint, reload it and finish: the
//! result matches the run that was never interrupted.

use mtp::checkpoint::{self, Checkpoint};
use mtp::cli::{batch_source, build_trainer};
use mtp::config::RunConfig;
use mtp::training::MetricsLog;

fn main() -> mtp::Result<()> {
    let run = RunConfig::from_pairs(
        [
            ("model.d_model", "32"),
            ("model.n_total_layers", "3"),
            ("model.n_future", "2"),
            ("model.head_arch", "anticausal"),
            ("train.steps", "30"),
            ("train.warmup_steps", "3"),
            ("train.batch_tokens", "192"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string())),
    )?;
    let source = batch_source(&run)?;

    let mut straight = build_trainer(&run)?;
    straight.run_until(source.as_ref(), 30, &mut MetricsLog::default(), 10)?;

    let mut first = build_trainer(&run)?;
    first.run_until(source.as_ref(), 12, &mut MetricsLog::default(), 10)?;
    let path = std::env::temp_dir().join("mtp-example.mtpc");
    checkpoint::from_trainer(&first, &run).save(&path)?;
    drop(first);

    let (mut resumed, _) = checkpoint::to_trainer(&Checkpoint::load(&path)?)?;
    println!("resumed at step {}", resumed.step);
    resumed.run_until(source.as_ref(), 30, &mut MetricsLog::default(), 10)?;

    let max_diff = straight
        .model
        .params
        .iter()
        .zip(resumed.model.params.iter())
        .flat_map(|(a, b)| a.tensor.values().iter().zip(b.tensor.values()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("max parameter difference after 30 steps: {max_diff:e}");
    println!("checkpoint: {} ({} bytes)", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    Ok(())
}
