//! Shared trunk, per-offset heads and the unembedding.
//!
//! Head `i` (1-based) predicts the token `i` positions after the current one:
//! `logits_i = f_u(f_{h_i}(f_s(x)))`. The trunk ends with one shared RMS norm;
//! transformer heads are ordinary pre-norm blocks with their own norms.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MtpError, Result};
use crate::rng;
use crate::tensor::{Graph, NodeId, Tensor};

pub const ROPE_BASE: f64 = 10_000.0;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadArch {
    /// Independent transformer-layer heads on top of the trunk.
    Parallel,
    /// Head `i` is applied on top of head `i-1`.
    Causal,
    /// Head `i` is applied on top of head `i+1`; head `n` sits on the trunk.
    Anticausal,
    /// One bias-free `d×d` linear map per head.
    Linear,
    /// No head layers; one unembedding matrix per head.
    ReplicatedUnembedding,
}

impl HeadArch {
    pub const ALL: [HeadArch; 5] = [
        HeadArch::Parallel,
        HeadArch::Causal,
        HeadArch::Anticausal,
        HeadArch::Linear,
        HeadArch::ReplicatedUnembedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadArch::Parallel => "parallel",
            HeadArch::Causal => "causal",
            HeadArch::Anticausal => "anticausal",
            HeadArch::Linear => "linear",
            HeadArch::ReplicatedUnembedding => "replicated_unembedding",
        }
    }

    /// Whether every head is one transformer layer taken from the trunk budget.
    pub fn uses_transformer_heads(self) -> bool {
        matches!(
            self,
            HeadArch::Parallel | HeadArch::Causal | HeadArch::Anticausal
        )
    }
}

impl fmt::Display for HeadArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadArch {
    type Err = MtpError;

    fn from_str(s: &str) -> Result<Self> {
        HeadArch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                MtpError::Config(format!(
                    "unknown head architecture '{s}' (expected one of parallel, causal, anticausal, linear, replicated_unembedding)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_total_layers: usize,
    pub n_attn_heads: usize,
    pub n_future: usize,
    pub head_arch: HeadArch,
    pub vocab_size: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Architecture shapes named after their non-embedding parameter budget.
    pub fn preset(name: &str, vocab_size: usize, context_len: usize) -> Result<Self> {
        let (d_model, n_total_layers, n_attn_heads) = match name {
            "1M" => (128, 5, 4),
            "3M" => (256, 4, 8),
            "10M" => (384, 6, 8),
            "30M" => (512, 10, 8),
            "100M" => (768, 14, 12),
            other => return Err(MtpError::Config(format!("unknown model preset '{other}'"))),
        };
        Ok(Self {
            d_model,
            n_total_layers,
            n_attn_heads,
            n_future: 1,
            head_arch: HeadArch::Parallel,
            vocab_size,
            context_len,
            seed: 0,
        })
    }

    pub fn trunk_layers(&self) -> usize {
        if self.head_arch.uses_transformer_heads() {
            self.n_total_layers.saturating_sub(self.n_future)
        } else {
            self.n_total_layers
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_attn_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d_model == 0 {
            problems.push("d_model must be positive".to_string());
        }
        if self.n_attn_heads == 0 || self.d_model % self.n_attn_heads != 0 {
            problems.push(format!(
                "d_model {} must be divisible by n_attn_heads {}",
                self.d_model, self.n_attn_heads
            ));
        } else if self.head_dim() % 2 != 0 {
            problems.push(format!(
                "head dimension {} must be even for rotary encoding",
                self.head_dim()
            ));
        }
        if self.vocab_size < 2 {
            problems.push("vocab_size must be at least 2".to_string());
        }
        if self.n_future < 1 || self.n_future > self.context_len {
            problems.push(format!(
                "n_future {} must lie in [1, context_len={}]",
                self.n_future, self.context_len
            ));
        }
        if self.head_arch.uses_transformer_heads() && self.n_total_layers < self.n_future + 1 {
            problems.push(format!(
                "trunk_layers = n_total_layers - n_future = {} - {} must be >= 1 for {} heads",
                self.n_total_layers, self.n_future, self.head_arch
            ));
        }
        if !self.head_arch.uses_transformer_heads() && self.n_total_layers < 1 {
            problems.push("n_total_layers must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MtpError::Config(problems.join("; ")))
        }
    }
}

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Decoupled weight decay applies to weight matrices only: never to
    /// norm gains or the token embedding.
    pub decay: bool,
}

/// Flat list of named parameters with gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn push(&mut self, name: String, tensor: Tensor, decay: bool) -> ParamId {
        self.params.push(Param {
            name,
            tensor,
            decay,
        });
        self.params.len() - 1
    }

    pub fn push_param(&mut self, param: Param) -> ParamId {
        self.params.push(param);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.params[id].tensor.grad_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Adds every parameter gradient recorded in `graph` into the store.
    pub fn collect_grads(&mut self, graph: &Graph) {
        for (id, g) in graph.param_grads() {
            self.accumulate_grad(id, g);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub attn_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub mlp_norm: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
}

impl BlockParams {
    pub fn ids(&self) -> [ParamId; 8] {
        [
            self.attn_norm,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.mlp_norm,
            self.w1,
            self.w2,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub enum HeadParams {
    Block(BlockParams),
    Linear(ParamId),
    Identity,
}

/// `rows` sequences of `seq_len` token ids, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    rows: usize,
    seq_len: usize,
    ids: Vec<usize>,
}

impl TokenBatch {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let seq_len = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || seq_len == 0 {
            return Err(MtpError::Data("empty token batch".into()));
        }
        if rows.iter().any(|r| r.len() != seq_len) {
            return Err(MtpError::Data("token batch rows differ in length".into()));
        }
        Ok(Self {
            rows: rows.len(),
            seq_len,
            ids: rows.into_iter().flatten().collect(),
        })
    }

    pub fn single(tokens: &[usize]) -> Result<Self> {
        Self::new(vec![tokens.to_vec()])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.seq_len..(r + 1) * self.seq_len]
    }

    /// Target ids for head `offset`: token `t + offset` of the same row, or
    /// `ignore` when that position falls outside the row.
    pub fn shifted_targets(&self, offset: usize, ignore: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ids.len());
        for r in 0..self.rows {
            let row = self.row(r);
            for t in 0..self.seq_len {
                out.push(row.get(t + offset).copied().unwrap_or(ignore));
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct MultiTokenModel {
    config: ModelConfig,
    pub params: ParamStore,
    embed: ParamId,
    trunk: Vec<BlockParams>,
    final_norm: ParamId,
    heads: Vec<HeadParams>,
    unembed: Vec<ParamId>,
}

impl MultiTokenModel {
    /// Builds a model with weights drawn deterministically from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, &[rng::purpose("init")]);
        let d = config.d_model;
        let v = config.vocab_size;
        let out_std = INIT_STD / (2.0 * config.n_total_layers as f64).sqrt();
        let mut params = ParamStore::default();

        let embed = params.push(
            "embedding".into(),
            normal(&mut rng, vec![v, d], INIT_STD),
            false,
        );
        let block = |params: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng, prefix: &str| {
            BlockParams {
                attn_norm: params.push(format!("{prefix}.attn_norm"), ones(d), false),
                wq: params.push(format!("{prefix}.wq"), normal(rng, vec![d, d], INIT_STD), true),
                wk: params.push(format!("{prefix}.wk"), normal(rng, vec![d, d], INIT_STD), true),
                wv: params.push(format!("{prefix}.wv"), normal(rng, vec![d, d], INIT_STD), true),
                wo: params.push(format!("{prefix}.wo"), normal(rng, vec![d, d], out_std), true),
                mlp_norm: params.push(format!("{prefix}.mlp_norm"), ones(d), false),
                w1: params.push(format!("{prefix}.w1"), normal(rng, vec![d, 4 * d], INIT_STD), true),
                w2: params.push(format!("{prefix}.w2"), normal(rng, vec![4 * d, d], out_std), true),
            }
        };
        let trunk = (0..config.trunk_layers())
            .map(|l| block(&mut params, &mut rng, &format!("trunk.{l}")))
            .collect();
        let final_norm = params.push("final_norm".into(), ones(d), false);
        let heads = (1..=config.n_future)
            .map(|i| match config.head_arch {
                HeadArch::Parallel | HeadArch::Causal | HeadArch::Anticausal => {
                    HeadParams::Block(block(&mut params, &mut rng, &format!("head.{i}")))
                }
                HeadArch::Linear => HeadParams::Linear(params.push(
                    format!("head.{i}.linear"),
                    normal(&mut rng, vec![d, d], INIT_STD),
                    true,
                )),
                HeadArch::ReplicatedUnembedding => HeadParams::Identity,
            })
            .collect();
        let n_unembed = if config.head_arch == HeadArch::ReplicatedUnembedding {
            config.n_future
        } else {
            1
        };
        let unembed = (0..n_unembed)
            .map(|i| {
                let name = if n_unembed == 1 {
                    "unembedding".to_string()
                } else {
                    format!("unembedding.{}", i + 1)
                };
                params.push(name, normal(&mut rng, vec![d, v], INIT_STD), true)
            })
            .collect();

        Ok(Self {
            config,
            params,
            embed,
            trunk,
            final_norm,
            heads,
            unembed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_future(&self) -> usize {
        self.config.n_future
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    /// Parameter counts per component plus `"total"`.
    pub fn count_params(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for p in self.params.iter() {
            let key = if p.name == "embedding" {
                "embedding"
            } else if p.name.starts_with("trunk.") {
                "trunk"
            } else if p.name == "final_norm" {
                "final_norm"
            } else if p.name.starts_with("head.") {
                "heads"
            } else {
                "unembedding"
            };
            *counts.entry(key.to_string()).or_insert(0) += p.tensor.len();
        }
        for key in ["embedding", "trunk", "final_norm", "heads", "unembedding"] {
            counts.entry(key.to_string()).or_insert(0);
        }
        let total = counts.values().sum();
        counts.insert("total".into(), total);
        counts
    }

    /// Trunk output `z = f_s(x)` for one sequence, shape `[T×d]`.
    pub fn trunk_forward(&self, tokens: &[usize]) -> Result<Tensor> {
        let batch = TokenBatch::single(tokens)?;
        let mut g = Graph::no_grad();
        let mut fwd = Forward::new(self, &mut g);
        let z = fwd.trunk(&batch)?;
        Ok(g.value(z)?.detached())
    }

    /// Pre-softmax logits of head `i` (1-based) given a trunk output `z`.
    pub fn head_logits(&self, z: &Tensor, i: usize) -> Result<Tensor> {
        let mut g = Graph::no_grad();
        let zn = g.leaf(z.detached());
        let mut fwd = Forward::new(self, &mut g);
        let u = fwd.head_output(zn, i, z.rows())?;
        let l = fwd.logits(u, i)?;
        Ok(g.value(l)?.detached())
    }

    /// Logits of heads `1..=k` for every position of every row, each `[rows·T × V]`.
    pub fn logits(&self, batch: &TokenBatch, k: usize) -> Result<Vec<Tensor>> {
        if k == 0 || k > self.config.n_future {
            return Err(MtpError::Index(format!(
                "requested {k} heads, model has {}",
                self.config.n_future
            )));
        }
        let mut g = Graph::no_grad();
        let mut fwd = Forward::new(self, &mut g);
        let z = fwd.trunk(batch)?;
        let outs = fwd.head_outputs(z, batch.seq_len(), k)?;
        let mut logits = Vec::with_capacity(k);
        for (i, u) in outs.into_iter().enumerate() {
            let l = fwd.logits(u, i + 1)?;
            logits.push(l);
        }
        logits
            .into_iter()
            .map(|l| Ok(g.value(l)?.detached()))
            .collect()
    }
}


impl MultiTokenModel {
    /// Argmax token of heads `1..=k` at positions `from..T` of every row,
    /// indexed `[row][position − from][head − 1]`. Only the requested rows
    /// are unembedded; every kernel is row-independent, so a position's
    /// prediction does not depend on how many later positions are present.
    pub fn greedy_heads(
        &self,
        batch: &TokenBatch,
        k: usize,
        from: usize,
    ) -> Result<Vec<Vec<Vec<usize>>>> {
        let n = self.config.n_future;
        if k == 0 || k > n {
            return Err(MtpError::Index(format!("requested {k} heads, model has {n}")));
        }
        let seq = batch.seq_len();
        if from >= seq {
            return Err(MtpError::Index(format!(
                "first position {from} outside a row of length {seq}"
            )));
        }
        let width = seq - from;
        let mut out = vec![vec![vec![0usize; k]; width]; batch.rows()];
        let mut g = Graph::no_grad();
        let mut fwd = Forward::new(self, &mut g);
        let z = fwd.trunk(batch)?;
        let outs = fwd.head_outputs(z, seq, k)?;
        for (h, u) in outs.into_iter().enumerate() {
            let full = fwd.graph().value(u)?;
            let d = full.cols();
            let mut picked = Vec::with_capacity(batch.rows() * width * d);
            for r in 0..batch.rows() {
                for t in from..seq {
                    picked.extend_from_slice(full.row(r * seq + t));
                }
            }
            let tail = fwd.graph().leaf(Tensor::new(vec![batch.rows() * width, d], picked)?);
            let l = fwd.logits(tail, h + 1)?;
            let logits = fwd.graph().value(l)?;
            for (r, row_out) in out.iter_mut().enumerate() {
                for (p, slot) in row_out.iter_mut().enumerate() {
                    slot[h] = crate::tensor::argmax(logits.row(r * width + p));
                }
            }
            fwd.graph().free_node(l)?;
        }
        Ok(out)
    }
}

fn normal(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

fn ones(d: usize) -> Tensor {
    Tensor::new(vec![d], vec![1.0; d]).expect("shape")
}

/// Builds model computations into a graph, binding each parameter at most once.
pub struct Forward<'m, 'g> {
    model: &'m MultiTokenModel,
    graph: &'g mut Graph,
    bound: Vec<Option<NodeId>>,
}

impl<'m, 'g> Forward<'m, 'g> {
    pub fn new(model: &'m MultiTokenModel, graph: &'g mut Graph) -> Self {
        Self {
            model,
            bound: vec![None; model.params.len()],
            graph,
        }
    }

    pub fn graph(&mut self) -> &mut Graph {
        self.graph
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.bound[id] {
            return n;
        }
        let n = self
            .graph
            .param(id, self.model.params.get(id).tensor.detached());
        self.bound[id] = Some(n);
        n
    }

    pub fn block(&mut self, x: NodeId, b: &BlockParams, seq_len: usize) -> Result<NodeId> {
        let cfg = &self.model.config;
        let (heads, base) = (cfg.n_attn_heads, ROPE_BASE);
        let g1 = self.param(b.attn_norm);
        let (wq, wk, wv, wo) = (self.param(b.wq), self.param(b.wk), self.param(b.wv), self.param(b.wo));
        let h = self.graph.rms_norm(x, g1)?;
        let a = self
            .graph
            .causal_attention(h, wq, wk, wv, wo, heads, seq_len, base)?;
        let x = self.graph.add(x, a)?;
        let g2 = self.param(b.mlp_norm);
        let (w1, w2) = (self.param(b.w1), self.param(b.w2));
        let h = self.graph.rms_norm(x, g2)?;
        let h = self.graph.matmul(h, w1)?;
        let h = self.graph.gelu(h)?;
        let m = self.graph.matmul(h, w2)?;
        self.graph.add(x, m)
    }

    /// `z = final_norm(blocks(embed(x)))` over all rows of the batch.
    pub fn trunk(&mut self, batch: &TokenBatch) -> Result<NodeId> {
        let cfg = &self.model.config;
        if batch.seq_len() > cfg.context_len {
            return Err(MtpError::ContextOverflow {
                needed: batch.seq_len(),
                context_len: cfg.context_len,
            });
        }
        let e = self.param(self.model.embed);
        let mut x = self.graph.embedding(e, batch.ids())?;
        for b in self.model.trunk.clone() {
            x = self.block(x, &b, batch.seq_len())?;
        }
        let gn = self.param(self.model.final_norm);
        self.graph.rms_norm(x, gn)
    }

    fn apply_head(&mut self, i: usize, x: NodeId, seq_len: usize) -> Result<NodeId> {
        match self.model.heads[i - 1] {
            HeadParams::Block(b) => self.block(x, &b, seq_len),
            HeadParams::Linear(w) => {
                let w = self.param(w);
                self.graph.matmul(x, w)
            }
            HeadParams::Identity => Ok(x),
        }
    }

    /// Pre-unembedding output of head `i`, chaining through other heads for
    /// the causal and anticausal variants.
    pub fn head_output(&mut self, z: NodeId, i: usize, seq_len: usize) -> Result<NodeId> {
        let n = self.model.config.n_future;
        if i == 0 || i > n {
            return Err(MtpError::Index(format!("head index {i} outside 1..={n}")));
        }
        match self.model.config.head_arch {
            HeadArch::Causal => {
                let mut u = z;
                for j in 1..=i {
                    u = self.apply_head(j, u, seq_len)?;
                }
                Ok(u)
            }
            HeadArch::Anticausal => {
                let mut u = z;
                for j in (i..=n).rev() {
                    u = self.apply_head(j, u, seq_len)?;
                }
                Ok(u)
            }
            _ => self.apply_head(i, z, seq_len),
        }
    }

    /// Outputs of heads `1..=k`, sharing chained computation where possible.
    pub fn head_outputs(&mut self, z: NodeId, seq_len: usize, k: usize) -> Result<Vec<NodeId>> {
        let n = self.model.config.n_future;
        match self.model.config.head_arch {
            HeadArch::Causal => {
                let mut outs = Vec::with_capacity(k);
                let mut u = z;
                for j in 1..=k {
                    u = self.apply_head(j, u, seq_len)?;
                    outs.push(u);
                }
                Ok(outs)
            }
            HeadArch::Anticausal => {
                let mut outs = vec![z; n];
                let mut u = z;
                for j in (1..=n).rev() {
                    u = self.apply_head(j, u, seq_len)?;
                    outs[j - 1] = u;
                }
                outs.truncate(k);
                Ok(outs)
            }
            _ => (1..=k).map(|i| self.apply_head(i, z, seq_len)).collect(),
        }
    }

    /// Applies `head`'s unembedding step by step to a head output.
    pub fn logits(&mut self, u: NodeId, head: usize) -> Result<NodeId> {
        let idx = if self.model.unembed.len() == 1 { 0 } else { head - 1 };
        let w = self.param(self.model.unembed[idx]);
        let l = self.graph.matmul(u, w)?;
        self.graph.mark_logits(l);
        Ok(l)
    }

    /// Head layer `i` applied to an arbitrary input, without chaining.
    pub fn head_layer(&mut self, i: usize, x: NodeId, seq_len: usize) -> Result<NodeId> {
        self.apply_head(i, x, seq_len)
    }
}
