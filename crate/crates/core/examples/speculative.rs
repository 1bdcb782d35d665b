//! Self-speculative decoding: the extra heads draft a block, head 1 verifies
//! it, and the output is identical to greedy decoding. Trains a small
//! four-head arithmetic model first, then benchmarks k = 1..4.

use mtp::cli::{batch_source, build_trainer, task_prompts};
use mtp::config::RunConfig;
use mtp::decoding::{bench_csv, benchmark_decoding, SuccessorStub};
use mtp::training::MetricsLog;

fn main() -> mtp::Result<()> {
    let steps = std::env::args().nth(1).unwrap_or_else(|| "150".into());
    let run = RunConfig::from_pairs(
        [
            ("model.n_future", "4"),
            ("model.n_total_layers", "6"),
            ("model.d_model", "64"),
            ("train.steps", steps.as_str()),
            ("train.warmup_steps", "10"),
            ("train.batch_tokens", "768"),
            ("decode.k", "1,2,3,4"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string())),
    )?;
    let mut trainer = build_trainer(&run)?;
    trainer.run_until(batch_source(&run)?.as_ref(), run.train.steps, &mut MetricsLog::default(), 50)?;

    let (prompts, stops) = task_prompts(&run, 100)?;
    let rows = benchmark_decoding(&trainer.model, &prompts, &[1, 2, 3, 4], 16, &stops)?;
    println!("trained model, {} prompts:\n{}", prompts.len(), bench_csv(&rows));

    // A predictor whose drafts are always right reaches k tokens per forward.
    let stub = SuccessorStub::new(17, 4, 96);
    let rows = benchmark_decoding(&stub, &[vec![0], vec![5]], &[1, 2, 4], 40, &[])?;
    println!("all-accept stub:\n{}", bench_csv(&rows));
    Ok(())
}
