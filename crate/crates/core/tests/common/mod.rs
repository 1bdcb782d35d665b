#![allow(dead_code)]

use mtp::model::{HeadArch, ModelConfig, MultiTokenModel, TokenBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_config(n_future: usize, head_arch: HeadArch, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_total_layers: n_future + 1,
        n_attn_heads: 2,
        n_future,
        head_arch,
        vocab_size: 11,
        context_len: 12,
        seed,
    }
}

/// A model whose weights are large enough that every gradient is well away
/// from zero, so relative-error checks are meaningful.
pub fn sharpened(config: ModelConfig, seed: u64) -> MultiTokenModel {
    let mut model = MultiTokenModel::new(config).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let w = Normal::new(0.0, 0.35).unwrap();
    for p in model.params.iter_mut() {
        let is_gain = p.name.ends_with("norm");
        for v in p.tensor.values_mut() {
            *v = if is_gain {
                1.0 + 0.2 * w.sample(&mut r)
            } else {
                w.sample(&mut r)
            };
        }
    }
    model
}

pub fn random_batch(rows: usize, seq: usize, vocab: usize, seed: u64) -> TokenBatch {
    let mut r = rng(seed);
    TokenBatch::new(
        (0..rows)
            .map(|_| (0..seq).map(|_| r.random_range(0..vocab)).collect())
            .collect(),
    )
    .unwrap()
}

pub fn grads(model: &MultiTokenModel) -> Vec<Vec<f64>> {
    model
        .params
        .iter()
        .map(|p| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

use mtp::tensor::{Graph, NodeId, Tensor};

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(r)).collect()).unwrap()
}

/// Builds `out = build(graph, leaves)`, backpropagates a random upstream
/// gradient `w` and compares every leaf gradient with the central difference
/// of `Σ w ⊙ out` (step `h`). Returns the largest relative error.
pub fn gradcheck(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
    seed: u64,
    h: f64,
) -> f64 {
    let eval = |xs: &[Tensor]| -> Vec<f64> {
        let mut g = Graph::no_grad();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &ids);
        g.value(out).unwrap().values().to_vec()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut g, &ids);
    let n_out = g.value(out).unwrap().len();
    let mut r = rng(seed);
    let w: Vec<f64> = (0..n_out).map(|_| r.random_range(-1.0..1.0)).collect();
    g.backward_from(out, &w).unwrap();

    let objective = |xs: &[Tensor]| -> f64 { eval(xs).iter().zip(&w).map(|(a, b)| a * b).sum() };
    let mut worst: f64 = 0.0;
    for (which, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[which].len()]);
        for j in 0..inputs[which].len() {
            let mut plus = inputs.to_vec();
            plus[which].values_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[which].values_mut()[j] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric, 1e-6));
        }
    }
    worst
}

/// Primitive name and the relative-error bound it must meet.
pub const PRIMITIVES: [(&str, f64); 9] = [
    ("matmul", 1e-6),
    ("add", 1e-6),
    ("rms_norm", 1e-6),
    ("gelu", 1e-4),
    ("embedding", 1e-4),
    ("attention", 1e-5),
    ("causal_attention", 1e-5),
    ("cross_entropy", 1e-4),
    ("sum", 1e-4),
];

/// Worst relative error of one primitive over one random instance.
pub fn primitive_gradcheck(name: &str, instance: u64) -> f64 {
    let mut r = rng(1000 * instance + name.len() as u64);
    let m = r.random_range(1..5usize);
    let k = r.random_range(1..6usize);
    let p = r.random_range(1..5usize);
    let seed = instance + 77;
    match name {
        "matmul" => {
            let a = random_tensor(&mut r, &[m, k], 1.0);
            let b = random_tensor(&mut r, &[k, p], 1.0);
            gradcheck(&[a, b], &|g, x| g.matmul(x[0], x[1]).unwrap(), seed, 1e-5)
        }
        "add" => {
            let a = random_tensor(&mut r, &[m, k], 1.0);
            let b = random_tensor(&mut r, &[m, k], 1.0);
            gradcheck(&[a, b], &|g, x| g.add(x[0], x[1]).unwrap(), seed, 1e-5)
        }
        "rms_norm" => {
            let d = r.random_range(2..9usize);
            let x = random_tensor(&mut r, &[m, d], 1.0);
            let gain = random_tensor(&mut r, &[d], 1.0);
            gradcheck(&[x, gain], &|g, x| g.rms_norm(x[0], x[1]).unwrap(), seed, 1e-5)
        }
        "gelu" => {
            let x = random_tensor(&mut r, &[m, k], 1.5);
            gradcheck(&[x], &|g, x| g.gelu(x[0]).unwrap(), seed, 1e-5)
        }
        "embedding" => {
            let v = r.random_range(2..7usize);
            let table = random_tensor(&mut r, &[v, k], 1.0);
            let ids: Vec<usize> = (0..m + 2).map(|_| r.random_range(0..v)).collect();
            gradcheck(&[table], &move |g, x| g.embedding(x[0], &ids).unwrap(), seed, 1e-5)
        }
        "attention" => {
            let heads = r.random_range(1..3usize);
            let d = 2 * heads * r.random_range(1..3usize);
            let seq = r.random_range(1..5usize);
            let batch = r.random_range(1..3usize);
            let q = random_tensor(&mut r, &[batch * seq, d], 1.0);
            let k = random_tensor(&mut r, &[batch * seq, d], 1.0);
            let v = random_tensor(&mut r, &[batch * seq, d], 1.0);
            gradcheck(
                &[q, k, v],
                &move |g, x| g.attention_core(x[0], x[1], x[2], seq, heads, 10000.0).unwrap(),
                seed,
                1e-5,
            )
        }
        "causal_attention" => {
            let (seq, d, heads) = (5, 8, 2);
            let x = random_tensor(&mut r, &[seq, d], 1.0);
            let ws: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, &[d, d], 0.4)).collect();
            let mut inputs = vec![x];
            inputs.extend(ws);
            gradcheck(
                &inputs,
                &move |g, x| {
                    g.causal_attention(x[0], x[1], x[2], x[3], x[4], heads, seq, 10000.0)
                        .unwrap()
                },
                seed,
                1e-5,
            )
        }
        "cross_entropy" => {
            let v = r.random_range(2..8usize);
            let logits = random_tensor(&mut r, &[m + 1, v], 2.0);
            let targets: Vec<usize> = (0..m + 1)
                .map(|i| if i == 0 && m > 1 { usize::MAX } else { r.random_range(0..v) })
                .collect();
            gradcheck(
                &[logits],
                &move |g, x| g.cross_entropy(x[0], &targets, usize::MAX).unwrap(),
                seed,
                1e-5,
            )
        }
        "sum" => {
            let x = random_tensor(&mut r, &[m, k], 1.0);
            gradcheck(&[x], &|g, x| g.sum(x[0]).unwrap(), seed, 1e-5)
        }
        other => panic!("unknown primitive {other}"),
    }
}

/// Worst relative error over every parameter of a model with a 2-layer trunk
/// and two heads (transformer-layer heads on even instances, linear heads on
/// odd ones), comparing the naive joint gradient with central differences of the
/// multi-token loss.
pub fn model_gradcheck(instance: u64) -> f64 {
    use mtp::training::{compute_gradients, multi_token_loss, Schedule};
    let config = ModelConfig {
        d_model: 8,
        n_total_layers: if instance % 2 == 0 { 4 } else { 2 },
        n_attn_heads: 2,
        n_future: 2,
        head_arch: if instance % 2 == 0 { HeadArch::Parallel } else { HeadArch::Linear },
        vocab_size: 7,
        context_len: 6,
        seed: instance,
    };
    let mut model = sharpened(config, instance);
    let batch = random_batch(2, 6, 7, instance + 13);
    model.params.zero_grads();
    compute_gradients(&mut model, &batch, Schedule::NaiveJoint).unwrap();
    let analytic = grads(&model);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for pid in 0..model.params.len() {
        for j in 0..model.params.get(pid).tensor.len() {
            let orig = model.params.get(pid).tensor.values()[j];
            model.params.get_mut(pid).tensor.values_mut()[j] = orig + h;
            let lp = multi_token_loss(&model, &batch).unwrap().total;
            model.params.get_mut(pid).tensor.values_mut()[j] = orig - h;
            let lm = multi_token_loss(&model, &batch).unwrap().total;
            model.params.get_mut(pid).tensor.values_mut()[j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(analytic[pid][j], numeric, 1e-6));
        }
    }
    worst
}

/// Scalar re-implementation of the multi-token loss from raw head logits:
/// per head, the mean over in-range positions of `−log softmax(logits)[target]`.
pub fn brute_force_loss(model: &MultiTokenModel, batch: &TokenBatch) -> (f64, Vec<f64>) {
    let n = model.n_future();
    let logits = model.logits(batch, n).unwrap();
    let seq = batch.seq_len();
    let mut per_head = Vec::new();
    for (h, l) in logits.iter().enumerate() {
        let offset = h + 1;
        let (mut sum, mut count) = (0.0, 0usize);
        for r in 0..batch.rows() {
            for t in 0..seq {
                if t + offset >= seq {
                    continue;
                }
                let row = l.row(r * seq + t);
                let target = batch.row(r)[t + offset];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                sum += -(row[target].exp() / z).ln();
                count += 1;
            }
        }
        per_head.push(sum / count as f64);
    }
    (per_head.iter().sum(), per_head)
}

/// Gradients of the model under a schedule, starting from zero.
pub fn schedule_grads(
    model: &MultiTokenModel,
    batch: &TokenBatch,
    schedule: mtp::training::Schedule,
) -> (Vec<Vec<f64>>, mtp::training::LossReport) {
    let mut m = model.clone();
    m.params.zero_grads();
    let report = mtp::training::compute_gradients(&mut m, batch, schedule).unwrap();
    (grads(&m), report)
}

// ---------------------------------------------------------------------------
// Arithmetic-task oracle: integer polynomials reduced only at the end, and a
// parser for the serialised question that shares no code with the generator.

/// Full (untruncated) integer polynomial product.
pub fn naive_product(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = vec![0i64; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Reduce an integer polynomial to the ring: drop X^5 and above, then mod 7.
pub fn reduce(p: &[i64]) -> [u8; 5] {
    let mut c = [0u8; 5];
    for (i, slot) in c.iter_mut().enumerate() {
        *slot = p.get(i).copied().unwrap_or(0).rem_euclid(7) as u8;
    }
    c
}

pub fn ints(e: mtp::datagen::RingElem) -> Vec<i64> {
    e.coeffs.iter().map(|&c| c as i64).collect()
}

/// p(q(X)) by expanding every power q^i in full before reducing once.
pub fn naive_compose(p: mtp::datagen::RingElem, q: mtp::datagen::RingElem) -> [u8; 5] {
    let q = ints(q);
    let mut total = vec![0i64; 1];
    let mut power = vec![1i64];
    for &pi in &p.coeffs {
        if total.len() < power.len() {
            total.resize(power.len(), 0);
        }
        for (t, x) in total.iter_mut().zip(&power) {
            *t += pi as i64 * x;
        }
        power = naive_product(&power, &q);
    }
    reduce(&total)
}


fn ring_from(c: [u8; 5]) -> mtp::datagen::RingElem {
    mtp::datagen::RingElem::new(c.map(i64::from))
}

/// Evaluates a fully parenthesised question (`0..=6` digits, `+ * - ∘` as
/// ids 7..=10, parentheses 11 and 12).
pub fn naive_eval_question(tokens: &[usize]) -> [u8; 5] {
    fn expr(t: &[usize], i: &mut usize) -> [u8; 5] {
        if t[*i] != 11 {
            let mut c = [0u8; 5];
            for slot in c.iter_mut() {
                assert!(t[*i] < 7, "digit expected at {i}");
                *slot = t[*i] as u8;
                *i += 1;
            }
            return c;
        }
        *i += 1;
        let v = if t[*i] == 9 {
            *i += 1;
            let x = expr(t, i);
            x.map(|c| (7 - c) % 7)
        } else {
            let l = expr(t, i);
            let op = t[*i];
            *i += 1;
            let r = expr(t, i);
            let (li, ri) = (l.map(i64::from), r.map(i64::from));
            match op {
                7 => reduce(&li.iter().zip(&ri).map(|(a, b)| a + b).collect::<Vec<_>>()),
                8 => reduce(&naive_product(&li, &ri)),
                10 => naive_compose(ring_from(l), ring_from(r)),
                other => panic!("unexpected operator id {other}"),
            }
        };
        assert_eq!(t[*i], 12, "closing parenthesis expected");
        *i += 1;
        v
    }
    let mut i = 0;
    let v = expr(tokens, &mut i);
    assert_eq!(i, tokens.len(), "trailing tokens");
    v
}

// ---------------------------------------------------------------------------
// Small end-to-end runs.

/// A seconds-scale arithmetic run; `extra` pairs override the defaults.
pub fn tiny_run(extra: &[(&str, &str)]) -> mtp::config::RunConfig {
    let mut pairs: Vec<(String, String)> = [
        ("model.d_model", "16"),
        ("model.n_total_layers", "3"),
        ("model.n_attn_heads", "2"),
        ("model.context_len", "48"),
        ("train.seq_len", "48"),
        ("train.batch_tokens", "96"),
        ("train.steps", "40"),
        ("train.warmup_steps", "5"),
        ("poly.train_m_max", "2"),
        ("poly.eval_m_max", "3"),
        ("poly.test_per_m", "20"),
        ("decode.k", "1"),
    ]
    .iter()
    .chain(extra)
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    pairs.push(("run.log_every".into(), "1".into()));
    mtp::config::RunConfig::from_pairs(pairs).unwrap()
}

/// Trains `run` to completion, logging every step.
pub fn train_run(run: &mtp::config::RunConfig) -> (mtp::training::Trainer, mtp::training::MetricsLog) {
    let mut t = mtp::cli::build_trainer(run).unwrap();
    let source = mtp::cli::batch_source(run).unwrap();
    let mut log = mtp::training::MetricsLog::default();
    t.run_until(source.as_ref(), run.train.steps, &mut log, 1).unwrap();
    (t, log)
}

/// Metrics CSV without the wall-clock column.
pub fn metrics_without_time(log: &mtp::training::MetricsLog) -> String {
    log.to_csv()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn param_values(m: &MultiTokenModel) -> Vec<Vec<f64>> {
    m.params.iter().map(|p| p.tensor.values().to_vec()).collect()
}
