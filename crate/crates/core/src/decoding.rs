//! Greedy generation and lossless greedy self-speculative decoding.
//!
//! The speculative loop drafts with heads `2..=k` and verifies with head 1 in
//! the next forward. Verification and the next draft share one forward; only
//! the very first forward is a pure proposal.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{MtpError, Result};
use crate::model::{MultiTokenModel, TokenBatch};

/// Anything that can report the greedy choice of its first `k` heads.
pub trait HeadPredictor {
    fn n_heads(&self) -> usize;
    fn context_len(&self) -> usize;
    /// Argmax of heads `1..=k` at positions `from..tokens.len()`,
    /// indexed `[position − from][head − 1]`.
    fn predict(&self, tokens: &[usize], k: usize, from: usize) -> Result<Vec<Vec<usize>>>;

    /// [`predict`](Self::predict) over equal-length rows, `[row][position − from][head − 1]`.
    fn predict_rows(&self, rows: &[Vec<usize>], k: usize, from: usize) -> Result<Vec<Vec<Vec<usize>>>> {
        rows.iter().map(|r| self.predict(r, k, from)).collect()
    }
}

impl HeadPredictor for MultiTokenModel {
    fn n_heads(&self) -> usize {
        self.n_future()
    }

    fn context_len(&self) -> usize {
        self.config().context_len
    }

    fn predict(&self, tokens: &[usize], k: usize, from: usize) -> Result<Vec<Vec<usize>>> {
        let batch = TokenBatch::single(tokens)?;
        Ok(self.greedy_heads(&batch, k, from)?.swap_remove(0))
    }

    fn predict_rows(&self, rows: &[Vec<usize>], k: usize, from: usize) -> Result<Vec<Vec<Vec<usize>>>> {
        self.greedy_heads(&TokenBatch::new(rows.to_vec())?, k, from)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeConfig {
    pub k: usize,
    pub max_new_tokens: usize,
    pub stop_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStats {
    pub forwards: usize,
    pub emitted: usize,
    /// `accept_histogram[b − 1]` counts forwards that emitted `b` tokens.
    pub accept_histogram: Vec<usize>,
    pub tokens_per_forward: f64,
    /// Opening proposal-only forwards (one per speculative generation).
    pub proposal_forwards: usize,
}

impl DecodeStats {
    fn new(k: usize) -> Self {
        Self {
            forwards: 0,
            emitted: 0,
            accept_histogram: vec![0; k.max(1)],
            tokens_per_forward: 0.0,
            proposal_forwards: 0,
        }
    }

    fn record(&mut self, block: usize) {
        self.forwards += 1;
        self.emitted += block;
        if block > 0 {
            self.accept_histogram[block - 1] += 1;
        }
        self.tokens_per_forward = self.emitted as f64 / self.forwards as f64;
    }

    /// Tokens per forward excluding the opening proposal-only forward, which
    /// can emit a single token at most. This is the long-run rate.
    pub fn steady_state_tokens_per_forward(&self) -> f64 {
        let steady = self.forwards - self.proposal_forwards;
        if steady == 0 {
            return self.tokens_per_forward;
        }
        (self.emitted - self.proposal_forwards) as f64 / steady as f64
    }

    pub fn merge(&mut self, other: &DecodeStats) {
        self.forwards += other.forwards;
        self.emitted += other.emitted;
        self.proposal_forwards += other.proposal_forwards;
        if self.accept_histogram.len() < other.accept_histogram.len() {
            self.accept_histogram.resize(other.accept_histogram.len(), 0);
        }
        for (a, b) in self.accept_histogram.iter_mut().zip(&other.accept_histogram) {
            *a += b;
        }
        self.tokens_per_forward = if self.forwards == 0 {
            0.0
        } else {
            self.emitted as f64 / self.forwards as f64
        };
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub stats: DecodeStats,
}

fn check_prompt(model: &dyn HeadPredictor, prompt: &[usize], max_new: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(MtpError::Contract("prompt must not be empty".into()));
    }
    // The final emitted token is never fed back, so it needs no slot.
    let needed = prompt.len() + max_new.saturating_sub(1);
    if needed > model.context_len() {
        return Err(MtpError::ContextOverflow {
            needed,
            context_len: model.context_len(),
        });
    }
    Ok(())
}

pub fn greedy_generate(
    model: &dyn HeadPredictor,
    prompt: &[usize],
    max_new_tokens: usize,
    stop_ids: &[usize],
) -> Result<Generation> {
    check_prompt(model, prompt, max_new_tokens)?;
    let mut ctx = prompt.to_vec();
    let mut stats = DecodeStats::new(1);
    let mut out = Vec::with_capacity(max_new_tokens);
    while out.len() < max_new_tokens {
        let next = model.predict(&ctx, 1, ctx.len() - 1)?[0][0];
        stats.record(1);
        out.push(next);
        ctx.push(next);
        if stop_ids.contains(&next) {
            break;
        }
    }
    Ok(Generation { tokens: out, stats })
}

pub fn self_speculative_generate(
    model: &dyn HeadPredictor,
    prompt: &[usize],
    config: &DecodeConfig,
) -> Result<Generation> {
    let k = config.k;
    if k == 0 || k > model.n_heads() {
        return Err(MtpError::Config(format!(
            "k = {k} must lie in 1..={}",
            model.n_heads()
        )));
    }
    check_prompt(model, prompt, config.max_new_tokens)?;
    let budget = config.max_new_tokens;
    let mut ctx = prompt.to_vec();
    let mut out: Vec<usize> = Vec::with_capacity(budget);
    let mut stats = DecodeStats::new(k);
    if budget == 0 {
        return Ok(Generation { tokens: out, stats });
    }

    // Opening forward: head 1 gives the next token, heads 2..k the draft.
    let preds = model.predict(&ctx, k, ctx.len() - 1)?;
    let first = preds[0][0];
    let mut draft: Vec<usize> = preds[0][1..].to_vec();
    stats.record(1);
    stats.proposal_forwards = 1;
    out.push(first);
    ctx.push(first);
    if config.stop_ids.contains(&first) {
        return Ok(Generation { tokens: out, stats });
    }

    while out.len() < budget {
        let remaining = budget - out.len();
        draft.truncate(remaining - 1);
        let base = ctx.len() - 1;
        let mut input = ctx.clone();
        input.extend(&draft);
        let preds = model.predict(&input, k, base)?;

        // preds[j][0] is head 1's choice after the context plus draft[..j].
        let accepted = draft
            .iter()
            .zip(&preds)
            .take_while(|(d, p)| **d == p[0])
            .count();
        let mut block: Vec<usize> = draft[..accepted].to_vec();
        block.push(preds[accepted][0]);

        let mut stopped = false;
        if let Some(i) = block.iter().position(|t| config.stop_ids.contains(t)) {
            block.truncate(i + 1);
            stopped = true;
        }
        stats.record(block.len());
        out.extend(&block);
        ctx.extend(&block);
        if stopped {
            break;
        }
        draft = preds[accepted][1..].to_vec();
    }
    Ok(Generation { tokens: out, stats })
}

/// One row of a decoding benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub prompts: usize,
    pub emitted: usize,
    pub forwards: usize,
    pub tokens_per_forward: f64,
    pub wall_ms_greedy: f64,
    pub wall_ms_spec: f64,
    pub speedup: f64,
    /// Speculative output equalled greedy output on every prompt.
    pub exact: bool,
}

/// Greedy baseline once, then speculative decoding for each `k`. With
/// `k = 1` the speculative loop is greedy decoding itself, so that row
/// reuses the baseline timing.
pub fn benchmark_decoding(
    model: &dyn HeadPredictor,
    prompts: &[Vec<usize>],
    ks: &[usize],
    max_new_tokens: usize,
    stop_ids: &[usize],
) -> Result<Vec<BenchRow>> {
    let started = Instant::now();
    let greedy: Vec<Generation> = prompts
        .iter()
        .map(|p| greedy_generate(model, p, max_new_tokens, stop_ids))
        .collect::<Result<_>>()?;
    let wall_greedy = started.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let config = DecodeConfig {
            k,
            max_new_tokens,
            stop_ids: stop_ids.to_vec(),
        };
        let started = Instant::now();
        let spec: Vec<Generation> = prompts
            .iter()
            .map(|p| self_speculative_generate(model, p, &config))
            .collect::<Result<_>>()?;
        let wall_spec = if k == 1 {
            wall_greedy
        } else {
            started.elapsed().as_secs_f64() * 1e3
        };
        let mut total = DecodeStats::new(k);
        for g in &spec {
            total.merge(&g.stats);
        }
        let exact = spec.iter().zip(&greedy).all(|(s, g)| s.tokens == g.tokens);
        rows.push(BenchRow {
            k,
            prompts: prompts.len(),
            emitted: total.emitted,
            forwards: total.forwards,
            tokens_per_forward: total.tokens_per_forward,
            wall_ms_greedy: wall_greedy,
            wall_ms_spec: wall_spec,
            speedup: if wall_spec > 0.0 { wall_greedy / wall_spec } else { 1.0 },
            exact,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "k,prompts,emitted,forwards,tokens_per_forward,wall_ms_greedy,wall_ms_spec,speedup,exact\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{:.1},{:.1},{:.2},{}",
            r.k,
            r.prompts,
            r.emitted,
            r.forwards,
            r.tokens_per_forward,
            r.wall_ms_greedy,
            r.wall_ms_spec,
            r.speedup,
            if r.exact { "pass" } else { "fail" }
        );
    }
    out
}

/// Toy predictor over a deterministic successor map `t → (a·t + c) mod V`
/// whose heads all agree with head 1 by construction: every draft is
/// accepted.
#[derive(Clone, Debug)]
pub struct SuccessorStub {
    pub vocab: usize,
    pub heads: usize,
    pub context_len: usize,
    pub a: usize,
    pub c: usize,
}

impl SuccessorStub {
    pub fn new(vocab: usize, heads: usize, context_len: usize) -> Self {
        Self {
            vocab,
            heads,
            context_len,
            a: 3,
            c: 1,
        }
    }

    fn step(&self, t: usize) -> usize {
        (self.a * t + self.c) % self.vocab
    }
}

impl HeadPredictor for SuccessorStub {
    fn n_heads(&self) -> usize {
        self.heads
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn predict(&self, tokens: &[usize], k: usize, from: usize) -> Result<Vec<Vec<usize>>> {
        Ok(tokens[from..]
            .iter()
            .map(|&t| {
                let mut cur = t;
                (0..k)
                    .map(|_| {
                        cur = self.step(cur);
                        cur
                    })
                    .collect()
            })
            .collect())
    }
}
