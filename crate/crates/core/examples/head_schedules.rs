//! Gradients of the multi-token loss under the naive schedule (all heads'
//! logits alive together) and the sequential one (one head at a time), for
//! every head architecture: same gradients, 1 versus n live logit buffers.

use mtp::model::{HeadArch, ModelConfig, MultiTokenModel, TokenBatch};
use mtp::training::{compute_gradients, Schedule};

fn grads(model: &MultiTokenModel, batch: &TokenBatch, s: Schedule) -> mtp::Result<(Vec<f64>, usize)> {
    let mut m = model.clone();
    m.params.zero_grads();
    let report = compute_gradients(&mut m, batch, s)?;
    let g = m.params.iter().flat_map(|p| p.tensor.grad().unwrap_or(&[]).to_vec()).collect();
    Ok((g, report.peak_logit_buffers))
}

fn main() -> mtp::Result<()> {
    let rows: Vec<Vec<usize>> = (0..4).map(|r| (0..32).map(|t| (t * 7 + r * 3) % 50).collect()).collect();
    let batch = TokenBatch::new(rows)?;
    for n in [2, 4] {
        for arch in HeadArch::ALL {
            let model = MultiTokenModel::new(ModelConfig {
                d_model: 32,
                n_total_layers: n + 2,
                n_attn_heads: 4,
                n_future: n,
                head_arch: arch,
                vocab_size: 50,
                context_len: 32,
                seed: 1,
            })?;
            let (a, peak_naive) = grads(&model, &batch, Schedule::NaiveJoint)?;
            let (b, peak_seq) = grads(&model, &batch, Schedule::SequentialHeads)?;
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            println!(
                "n={n} {arch:<22} max |Δgrad| = {diff:.1e}  peak logit buffers: naive {peak_naive}, sequential {peak_seq}"
            );
        }
    }
    Ok(())
}
