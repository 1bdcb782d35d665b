//! Next-token versus multi-token training on polynomial arithmetic, with
//! exact-match accuracy per operator count. Buckets with more operators than
//! the training range are out of domain.
//!
//! ```text
//! cargo run --release --example train_poly -- [steps] [n_future list] [seeds] [batch_tokens]
//! ```

use std::time::Instant;

use mtp::cli::{batch_source, build_trainer};
use mtp::config::RunConfig;
use mtp::eval::{in_and_out_of_domain, poly_accuracy};
use mtp::training::MetricsLog;

fn main() -> mtp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().cloned().unwrap_or_else(|| "300".into());
    let ns = args.get(1).cloned().unwrap_or_else(|| "1,2".into());
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let batch = args.get(3).cloned().unwrap_or_else(|| "1024".into());
    let warmup = (steps.parse::<u64>().unwrap_or(300) / 10).max(1).to_string();

    for seed in 0..seeds {
        for n in ns.split(',') {
            let run = RunConfig::from_pairs(
                [
                    ("seed", seed.to_string().as_str()),
                    ("model.n_future", n),
                    ("train.steps", &steps),
                    ("train.warmup_steps", &warmup),
                    ("train.batch_tokens", &batch),
                    ("poly.test_per_m", "200"),
                    ("decode.k", "1"),
                ]
                .map(|(k, v)| (k.to_string(), v.to_string())),
            )?;
            let started = Instant::now();
            let mut trainer = build_trainer(&run)?;
            let source = batch_source(&run)?;
            let mut log = MetricsLog::default();
            trainer.run_until(source.as_ref(), run.train.steps, &mut log, 50)?;
            let buckets = poly_accuracy(&trainer.model, &run.poly.test_sets()?)?;
            let (ind, ood) = in_and_out_of_domain(&buckets, run.poly.train_m.1);
            let digits: Vec<String> = buckets.iter().map(|b| format!("{:.2}", b.digit_accuracy)).collect();
            println!(
                "seed={seed} n={n} loss={:.3} in-domain={ind:.3} ood={ood:.3} digit-acc-by-m=[{}] ({:.0}s)",
                log.rows.last().map_or(f64::NAN, |r| r.loss.total),
                digits.join(" "),
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
