//! Byte-level language model on any text file (this crate's sources by
//! default), trained with two heads and sampled greedily.
//!
//! ```text
//! cargo run --release --example byte_lm -- [path] [steps]
//! ```

use mtp::cli::{batch_source, build_trainer};
use mtp::config::RunConfig;
use mtp::datagen::{byte_detokenize, byte_tokenize};
use mtp::decoding::{self_speculative_generate, DecodeConfig};
use mtp::training::MetricsLog;

fn main() -> mtp::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .cloned()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/src/model.rs").into());
    let steps = args.get(1).cloned().unwrap_or_else(|| "200".into());
    let run = RunConfig::from_pairs(
        [
            ("task", "bytes"),
            ("bytes.path", path.as_str()),
            ("model.d_model", "64"),
            ("model.n_total_layers", "4"),
            ("model.n_future", "2"),
            ("model.context_len", "128"),
            ("train.seq_len", "128"),
            ("train.batch_tokens", "1024"),
            ("train.steps", steps.as_str()),
            ("train.warmup_steps", "10"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string())),
    )?;
    let mut trainer = build_trainer(&run)?;
    let mut log = MetricsLog::default();
    trainer.run_until(batch_source(&run)?.as_ref(), run.train.steps, &mut log, 50)?;
    if let Some(last) = log.rows.last() {
        println!("loss per head after {} steps: {:.3?}", last.step, last.loss.per_head);
    }

    let prompt = byte_tokenize(b"pub fn ");
    let g = self_speculative_generate(
        &trainer.model,
        &prompt,
        &DecodeConfig { k: 2, max_new_tokens: 80, stop_ids: vec![] },
    )?;
    println!(
        "{}{}",
        String::from_utf8_lossy(&byte_detokenize(&prompt)?),
        String::from_utf8_lossy(&byte_detokenize(&g.tokens)?)
    );
    println!("tokens per forward: {:.2}", g.stats.tokens_per_forward);
    Ok(())
}
