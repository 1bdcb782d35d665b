//! Samples from each synthetic task, and a dataset written to disk the way
//! `mtp gen-data` does it.

use mtp::cli::cmd_gen_data;
use mtp::config::RunConfig;
use mtp::datagen::{gen_expr, render, serialize, InductionConfig};
use rand::SeedableRng;

fn main() -> mtp::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    println!("arithmetic over F7[X]/(X^5):");
    for m in [1, 3, 6] {
        let expr = gen_expr(m, &mut rng)?;
        let sample = serialize(&expr, if m == 6 { 3 } else { 0 });
        println!("  m={m}: {}", render(&sample.tokens()));
    }

    let ind = InductionConfig::default();
    let spec = ind.eval_spec()?;
    let story = &spec.corpus[0];
    println!("\ninduction story ({} tokens):", story.len());
    println!("  {}", story.iter().map(|&t| ind.glyph(t)).collect::<Vec<_>>().join(" "));
    for p in spec.name_positions.iter().filter(|p| p.sequence == 0) {
        println!(
            "  second name token at {} ({}), earlier mention: {}",
            p.position,
            ind.glyph(story[p.position]),
            p.prior_mention
        );
    }

    let out = std::env::temp_dir().join("mtp-datagen-example");
    let run = RunConfig::from_pairs([
        ("run.out_dir".to_string(), out.display().to_string()),
        ("poly.test_per_m".to_string(), "100".to_string()),
    ])?;
    cmd_gen_data(&run)?;
    println!("\nwrote test sets, vocabulary and manifest to {}", out.display());
    print!("{}", std::fs::read_to_string(out.join("manifest.txt")).unwrap_or_default());
    Ok(())
}
