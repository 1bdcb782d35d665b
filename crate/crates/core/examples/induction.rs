//! Trains next-token and two-token models on the synthetic induction corpus
//! and compares their accuracy on second name tokens.
//!
//! ```text
//! cargo run --release --example induction -- [preset] [steps] [seeds] [quality_mix]
//! ```

use std::time::Instant;

use mtp::cli::{batch_source, build_trainer};
use mtp::config::RunConfig;
use mtp::eval::induction_accuracy;
use mtp::training::MetricsLog;

fn main() -> mtp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("1M", String::as_str);
    let steps = args.get(1).map_or("300", String::as_str);
    let seeds: u64 = args.get(2).map_or(Ok(1), |s| s.parse()).unwrap_or(1);
    let mix = args.get(3).map_or("0", String::as_str);
    let every: u64 = 50;
    let (d, layers, heads) = match preset {
        "1M" => ("128", "5", "4"),
        "3M" => ("256", "4", "8"),
        other => (other, "4", "4"),
    };
    let warmup = (steps.parse::<u64>().unwrap_or(300) / 10).to_string();
    for seed in 0..seeds {
        for n in ["1", "2"] {
            let run = RunConfig::from_pairs(
                [
                    ("task", "induction"),
                    ("seed", &seed.to_string()),
                    ("model.d_model", d),
                    ("model.n_total_layers", layers),
                    ("model.n_attn_heads", heads),
                    ("model.n_future", n),
                    ("train.steps", steps),
                    ("train.warmup_steps", &warmup),
                    ("train.batch_tokens", "576"),
                    ("decode.k", "1"),
                    ("induction.quality_mix", mix),
                ]
                .map(|(k, v)| (k.to_string(), v.to_string())),
            )?;
            let started = Instant::now();
            let mut trainer = build_trainer(&run)?;
            let source = batch_source(&run)?;
            let mut log = MetricsLog::default();
            let spec = run.induction.eval_spec()?;
            let mut curve = Vec::new();
            while !trainer.is_done() {
                trainer.run_until(source.as_ref(), trainer.step + every, &mut log, 50)?;
                curve.push(induction_accuracy(&trainer.model, &spec)?.accuracy);
            }
            let best = curve.iter().copied().fold(0.0, f64::max);
            println!(
                "preset={preset} seed={seed} n={n} loss={:.3} best={best:.3} curve={:.3?} ({:.1}s)",
                log.rows.last().map_or(f64::NAN, |r| r.loss.total),
                curve,
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
