use std::cell::Cell;
use std::rc::Rc;

use super::kernels::{self, AttnDims};
use super::Tensor;
use crate::error::{MtpError, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Counts logit-sized buffers that are alive at the same time.
#[derive(Debug, Default)]
pub struct BufferMeter {
    live: Cell<usize>,
    peak: Cell<usize>,
    allocated: Cell<usize>,
}

impl BufferMeter {
    pub fn new() -> Rc<Self> {
        Rc::new(Self::default())
    }

    pub fn live(&self) -> usize {
        self.live.get()
    }

    pub fn peak(&self) -> usize {
        self.peak.get()
    }

    /// Number of logit buffers ever created.
    pub fn allocated(&self) -> usize {
        self.allocated.get()
    }

    pub fn reset_peak(&self) {
        self.peak.set(self.live.get());
    }

    fn acquire(&self) {
        let live = self.live.get() + 1;
        self.live.set(live);
        self.allocated.set(self.allocated.get() + 1);
        if live > self.peak.get() {
            self.peak.set(live);
        }
    }

    fn release(&self) {
        self.live.set(self.live.get().saturating_sub(1));
    }
}

enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    RmsNorm {
        x: usize,
        gain: usize,
        inv: Vec<f64>,
    },
    Gelu {
        x: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        dims: AttnDims,
        base: f64,
        q_rot: Vec<f64>,
        k_rot: Vec<f64>,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        ignore: usize,
        count: usize,
    },
    Sum {
        x: usize,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::RmsNorm { .. } => "rms_norm",
            Op::Gelu { .. } => "gelu",
            Op::Embedding { .. } => "embedding",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum { .. } => "sum",
        }
    }

    fn release_caches(&mut self) {
        match self {
            Op::RmsNorm { inv, .. } => *inv = Vec::new(),
            Op::Attention {
                q_rot, k_rot, probs, ..
            } => {
                *q_rot = Vec::new();
                *k_rot = Vec::new();
                *probs = Vec::new();
            }
            _ => {}
        }
    }
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
    param: Option<usize>,
    logits: bool,
}

/// Define-by-run computation graph. Nodes are appended in topological order
/// and `backward` visits them in exact reverse construction order.
pub struct Graph {
    nodes: Vec<Node>,
    meter: Option<Rc<BufferMeter>>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            meter: None,
            grad_enabled: true,
        }
    }

    /// A graph in which nothing requires gradients (inference).
    pub fn no_grad() -> Self {
        let mut g = Self::new();
        g.grad_enabled = false;
        g
    }

    pub fn with_meter(mut self, meter: Rc<BufferMeter>) -> Self {
        self.meter = Some(meter);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.tag()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
            logits: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| MtpError::Index(format!("node {} does not exist", id.0)))?
            .value
            .as_ref()
            .ok_or_else(|| MtpError::Contract(format!("node {} was freed", id.0)))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.val(id)
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let t = self.val(id)?;
        if t.len() != 1 {
            return Err(MtpError::Contract(format!(
                "expected a scalar, node {} has shape {:?}",
                id.0,
                t.shape()
            )));
        }
        Ok(t.values()[0])
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0)?.value.as_ref()?.grad()
    }

    /// Inserts a constant or trainable leaf, depending on `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let rg = t.requires_grad();
        self.push(Op::Leaf, t, rg)
    }

    /// Inserts a copy of parameter `param_id`. Its gradient is reported by
    /// [`Graph::param_grads`] after backward.
    pub fn param(&mut self, param_id: usize, t: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, t, true);
        self.nodes[id.0].param = Some(param_id);
        id
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        self.nodes[id.0].param.is_some()
    }

    /// Tags `id` as a logit-sized buffer for the attached meter.
    pub fn mark_logits(&mut self, id: NodeId) {
        let node = &mut self.nodes[id.0];
        if !node.logits && node.value.is_some() {
            node.logits = true;
            if let Some(m) = &self.meter {
                m.acquire();
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.val(a)?, self.val(b)?);
        if at.shape().len() != 2 || bt.shape().len() != 2 || at.shape()[1] != bt.shape()[0] {
            return Err(MtpError::Dimension {
                op: "matmul",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, at.values(), false, bt.values(), false, &mut c, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::MatMul { a: a.0, b: b.0 },
            Tensor::new(vec![m, n], c)?,
            rg,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.val(a)?, self.val(b)?);
        if at.shape() != bt.shape() {
            return Err(MtpError::Dimension {
                op: "add",
                left: at.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let v: Vec<f64> = at.values().iter().zip(bt.values()).map(|(x, y)| x + y).collect();
        let shape = at.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, Tensor::new(shape, v)?, rg))
    }

    /// `gain ⊙ x / sqrt(mean(x²) + 1e-5)` over the last axis.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let (xt, gt) = (self.val(x)?, self.val(gain)?);
        if gt.shape().len() != 1 || xt.cols() != gt.len() {
            return Err(MtpError::Dimension {
                op: "rms_norm",
                left: xt.shape().to_vec(),
                right: gt.shape().to_vec(),
            });
        }
        let (y, inv) = kernels::rms_norm_forward(xt.values(), gt.values());
        let shape = xt.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(
            Op::RmsNorm {
                x: x.0,
                gain: gain.0,
                inv,
            },
            Tensor::new(shape, y)?,
            rg,
        ))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let xt = self.val(x)?;
        let v = xt.values().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = xt.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::Gelu { x: x.0 }, Tensor::new(shape, v)?, rg))
    }

    /// Gathers rows of a `[V×d]` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tt = self.val(table)?;
        if tt.shape().len() != 2 {
            return Err(MtpError::Dimension {
                op: "embedding",
                left: tt.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if ids.is_empty() {
            return Err(MtpError::Contract("embedding of an empty id list".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(MtpError::Index(format!("token id {i} >= vocabulary size {v}")));
            }
            out.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), d], out)?,
            rg,
        ))
    }

    /// Multi-head causal attention core over projected `q`, `k`, `v`
    /// (`[batch·seq × d]`), with rotary encoding applied to `q` and `k`.
    pub fn attention_core(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        seq_len: usize,
        n_heads: usize,
        rope_base: f64,
    ) -> Result<NodeId> {
        let (qt, kt, vt) = (self.val(q)?, self.val(k)?, self.val(v)?);
        if qt.shape() != kt.shape() || qt.shape() != vt.shape() || qt.shape().len() != 2 {
            return Err(MtpError::Dimension {
                op: "attention",
                left: qt.shape().to_vec(),
                right: kt.shape().to_vec(),
            });
        }
        let d = qt.cols();
        if n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0 {
            return Err(MtpError::Config(format!(
                "model width {d} must split into {n_heads} heads of even size"
            )));
        }
        if seq_len == 0 || qt.rows() % seq_len != 0 {
            return Err(MtpError::Dimension {
                op: "attention",
                left: qt.shape().to_vec(),
                right: vec![seq_len],
            });
        }
        let dims = AttnDims {
            batch: qt.rows() / seq_len,
            seq: seq_len,
            heads: n_heads,
            head_dim: d / n_heads,
        };
        let mut q_rot = qt.values().to_vec();
        let mut k_rot = kt.values().to_vec();
        kernels::apply_rope(&mut q_rot, dims, rope_base, false);
        kernels::apply_rope(&mut k_rot, dims, rope_base, false);
        let (out, probs) = kernels::attention_forward(&q_rot, &k_rot, vt.values(), dims);
        let shape = qt.shape().to_vec();
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let keep = rg && self.grad_enabled;
        Ok(self.push(
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                dims,
                base: rope_base,
                q_rot: if keep { q_rot } else { Vec::new() },
                k_rot: if keep { k_rot } else { Vec::new() },
                probs: if keep { probs } else { Vec::new() },
            },
            Tensor::new(shape, out)?,
            rg,
        ))
    }

    /// Full attention sub-layer: projections, rotary causal core, output projection.
    #[allow(clippy::too_many_arguments)]
    pub fn causal_attention(
        &mut self,
        x: NodeId,
        wq: NodeId,
        wk: NodeId,
        wv: NodeId,
        wo: NodeId,
        n_heads: usize,
        seq_len: usize,
        rope_base: f64,
    ) -> Result<NodeId> {
        let q = self.matmul(x, wq)?;
        let k = self.matmul(x, wk)?;
        let v = self.matmul(x, wv)?;
        let a = self.attention_core(q, k, v, seq_len, n_heads, rope_base)?;
        self.matmul(a, wo)
    }

    /// Mean cross-entropy of `softmax(logits)` against `targets`, skipping
    /// rows whose target equals `ignore_index`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        ignore_index: usize,
    ) -> Result<NodeId> {
        let lt = self.val(logits)?;
        if lt.shape().len() != 2 || lt.rows() != targets.len() {
            return Err(MtpError::Dimension {
                op: "cross_entropy",
                left: lt.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let vocab = lt.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore_index && t >= vocab) {
            return Err(MtpError::Index(format!(
                "target {bad} outside vocabulary of size {vocab}"
            )));
        }
        let (loss, count) = kernels::cross_entropy_forward(lt.values(), vocab, targets, ignore_index);
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                ignore: ignore_index,
                count,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.val(x)?.values().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Op::Sum { x: x.0 }, Tensor::scalar(s), rg))
    }

    /// Backpropagates from a scalar node. Leaf gradients accumulate (`+=`).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let t = self.val(loss)?;
        if t.len() != 1 {
            return Err(MtpError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                t.shape()
            )));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Backpropagates an explicit upstream gradient `seed` for `node`.
    pub fn backward_from(&mut self, node: NodeId, seed: &[f64]) -> Result<()> {
        let n = self.val(node)?.len();
        if seed.len() != n {
            return Err(MtpError::Dimension {
                op: "backward",
                left: vec![n],
                right: vec![seed.len()],
            });
        }
        if !self.rg(node) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(node.0 + 1, || None);
        adj[node.0] = Some(seed.to_vec());

        for i in (0..=node.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let (before, rest) = self.nodes.split_at_mut(i);
            let cur = &mut rest[0];
            if cur.value.is_none() {
                return Err(MtpError::Contract(format!("backward reached freed node {i}")));
            }
            match &cur.op {
                Op::Leaf => {
                    if cur.requires_grad {
                        let t = cur.value.as_mut().expect("checked above");
                        for (a, b) in t.grad_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (input(before, *a)?, input(before, *b)?);
                    let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if before[*a].requires_grad {
                        let da = slot(&mut adj, *a, m * k);
                        kernels::gemm(m, nn, k, &g, false, bv.values(), true, da, true);
                    }
                    if before[*b].requires_grad {
                        let db = slot(&mut adj, *b, k * nn);
                        kernels::gemm(k, m, nn, av.values(), true, &g, false, db, true);
                    }
                }
                Op::Add { a, b } => {
                    for x in [*a, *b] {
                        if before[x].requires_grad {
                            let dx = slot(&mut adj, x, g.len());
                            for (d, v) in dx.iter_mut().zip(&g) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::RmsNorm { x, gain, inv } => {
                    let (xv, gv) = (input(before, *x)?, input(before, *gain)?);
                    let mut dx = before[*x].requires_grad.then(|| vec![0.0; xv.len()]);
                    let mut dg = before[*gain].requires_grad.then(|| vec![0.0; gv.len()]);
                    kernels::rms_norm_backward(
                        xv.values(),
                        gv.values(),
                        inv,
                        &g,
                        dx.as_deref_mut(),
                        dg.as_deref_mut(),
                    );
                    if let Some(dx) = dx {
                        add_into(slot(&mut adj, *x, dx.len()), &dx);
                    }
                    if let Some(dg) = dg {
                        add_into(slot(&mut adj, *gain, dg.len()), &dg);
                    }
                }
                Op::Gelu { x } => {
                    if before[*x].requires_grad {
                        let xv = input(before, *x)?.values().to_vec();
                        let dx = slot(&mut adj, *x, xv.len());
                        for ((d, xx), gg) in dx.iter_mut().zip(&xv).zip(&g) {
                            *d += gg * kernels::gelu_grad(*xx);
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    if before[*table].requires_grad {
                        let tv = input(before, *table)?;
                        let d = tv.shape()[1];
                        let dt = slot(&mut adj, *table, tv.len());
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    dims,
                    base,
                    q_rot,
                    k_rot,
                    probs,
                } => {
                    if probs.is_empty() {
                        return Err(MtpError::Contract(format!(
                            "attention node {i} has no saved activations"
                        )));
                    }
                    let vv = input(before, *v)?;
                    let (mut dq, mut dk, dv) =
                        kernels::attention_backward(&g, q_rot, k_rot, vv.values(), probs, *dims);
                    kernels::apply_rope(&mut dq, *dims, *base, true);
                    kernels::apply_rope(&mut dk, *dims, *base, true);
                    for (x, dx) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if before[x].requires_grad {
                            add_into(slot(&mut adj, x, dx.len()), &dx);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    count,
                } => {
                    if before[*logits].requires_grad {
                        let lv = input(before, *logits)?;
                        let vocab = lv.cols();
                        let vals = lv.values().to_vec();
                        let dl = slot(&mut adj, *logits, vals.len());
                        kernels::cross_entropy_backward(
                            &vals, vocab, targets, *ignore, *count, g[0], dl,
                        );
                    }
                }
                Op::Sum { x } => {
                    if before[*x].requires_grad {
                        let len = input(before, *x)?.len();
                        for d in slot(&mut adj, *x, len).iter_mut() {
                            *d += g[0];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Releases values, gradients and saved activations of every node that is
    /// neither a parameter nor listed in `keep`. Returns how many were freed.
    pub fn free_intermediates(&mut self, keep: &[NodeId]) -> usize {
        let mut freed = 0;
        for i in 0..self.nodes.len() {
            if self.nodes[i].param.is_some() || keep.iter().any(|k| k.0 == i) {
                continue;
            }
            if self.release(i) {
                freed += 1;
            }
        }
        freed
    }

    /// Releases a single non-parameter node.
    pub fn free_node(&mut self, id: NodeId) -> Result<()> {
        if self.nodes[id.0].param.is_some() {
            return Err(MtpError::Contract(format!(
                "node {} holds parameter {} and cannot be freed",
                id.0,
                self.nodes[id.0].param.unwrap_or_default()
            )));
        }
        self.release(id.0);
        Ok(())
    }

    fn release(&mut self, i: usize) -> bool {
        let node = &mut self.nodes[i];
        node.op.release_caches();
        if node.value.take().is_some() {
            if node.logits {
                if let Some(m) = &self.meter {
                    m.release();
                }
            }
            true
        } else {
            false
        }
    }

    /// `(parameter id, accumulated gradient)` for every parameter leaf that
    /// received a gradient.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.nodes.iter().filter_map(|n| {
            let p = n.param?;
            let g = n.value.as_ref()?.grad()?;
            Some((p, g))
        })
    }
}

impl Drop for Graph {
    fn drop(&mut self) {
        if let Some(m) = &self.meter {
            for n in &self.nodes {
                if n.logits && n.value.is_some() {
                    m.release();
                }
            }
        }
    }
}

fn input(nodes: &[Node], i: usize) -> Result<&Tensor> {
    nodes[i]
        .value
        .as_ref()
        .ok_or_else(|| MtpError::Contract(format!("backward needs freed node {i}")))
}

fn slot(adj: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    adj[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = g.leaf(Tensor::matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).unwrap().values(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.leaf(t(&[1, 2], &[1.0, 1.0]));
        let col = g.leaf(t(&[2, 1], &[2.0, 3.0]));
        let d = g.matmul(r, col).unwrap();
        assert_eq!(g.value(d).unwrap().values(), &[5.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 3]));
        let b = g.leaf(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[4], &[1.0, -2.0, 3.0, 0.5]).with_requires_grad(true));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_on_vector_is_contract_error() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(MtpError::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true));
        let s1 = g.sum(x).unwrap();
        let s2 = g.sum(x).unwrap();
        g.backward(s1).unwrap();
        g.backward(s2).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let l = g.leaf(t(&[1, 2], &[0.0, 0.0]));
        let ce = g.cross_entropy(l, &[0], usize::MAX).unwrap();
        assert!((g.scalar(ce).unwrap() - 2f64.ln()).abs() < 1e-15);

        let l = g.leaf(t(&[1, 2], &[10.0, -10.0]));
        let ce = g.cross_entropy(l, &[0], usize::MAX).unwrap();
        let expected = (-20f64).exp().ln_1p();
        assert!((g.scalar(ce).unwrap() - expected).abs() < 1e-20);
        assert!((g.scalar(ce).unwrap() - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn cross_entropy_fully_masked_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let l = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 1.0]).with_requires_grad(true));
        let ce = g.cross_entropy(l, &[7, 7], 7).unwrap();
        assert_eq!(g.scalar(ce).unwrap(), 0.0);
        g.backward(ce).unwrap();
        assert!(g.grad(l).map_or(true, |gr| gr.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::zeros(vec![1, 3]));
        assert!(matches!(
            g.cross_entropy(l, &[3], usize::MAX),
            Err(MtpError::Index(_))
        ));
    }

    #[test]
    fn rms_norm_examples() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[4], &[1.0; 4]));
        let gain = g.leaf(t(&[4], &[1.0; 4]));
        let y = g.rms_norm(x, gain).unwrap();
        for v in g.value(y).unwrap().values() {
            assert!((v - 1.0).abs() < 1e-5);
        }
        let x = g.leaf(t(&[2], &[2.0, 2.0]));
        let gain = g.leaf(t(&[2], &[1.0, 3.0]));
        let y = g.rms_norm(x, gain).unwrap();
        let v = g.value(y).unwrap().values();
        assert!((v[0] - 1.0).abs() < 1e-5 && (v[1] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn attention_requires_divisible_width() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 6]));
        assert!(matches!(
            g.attention_core(x, x, x, 2, 4, 10_000.0),
            Err(MtpError::Config(_))
        ));
    }

    #[test]
    fn freeing_parameters_is_refused_and_meter_tracks_logits() {
        let meter = BufferMeter::new();
        let mut g = Graph::new().with_meter(meter.clone());
        let p = g.param(0, Tensor::zeros(vec![2, 2]));
        let x = g.leaf(Tensor::zeros(vec![1, 2]));
        let l = g.matmul(x, p).unwrap();
        g.mark_logits(l);
        assert_eq!(meter.live(), 1);
        assert!(matches!(g.free_node(p), Err(MtpError::Contract(_))));
        g.free_intermediates(&[x]);
        assert_eq!(meter.live(), 0);
        assert!(g.value(x).is_ok());
        assert!(g.value(l).is_err());
        assert!(g.value(p).is_ok());
        drop(g);
        assert_eq!(meter.peak(), 1);
    }

    #[test]
    fn dropping_graph_releases_live_logits() {
        let meter = BufferMeter::new();
        {
            let mut g = Graph::new().with_meter(meter.clone());
            let x = g.leaf(Tensor::zeros(vec![1, 2]));
            g.mark_logits(x);
            assert_eq!(meter.live(), 1);
        }
        assert_eq!(meter.live(), 0);
    }
}
