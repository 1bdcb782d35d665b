use super::Schedule;
use crate::error::{MtpError, Result};
use crate::model::{Forward, HeadArch, MultiTokenModel, TokenBatch};
use crate::tensor::{BufferMeter, Graph, NodeId};

/// Target id used for positions whose future token lies past the row end.
pub const IGNORE_INDEX: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    /// Sum over heads of each head's mean cross-entropy.
    pub total: f64,
    pub per_head: Vec<f64>,
    /// Number of (position, head) terms that entered the loss.
    pub tokens_counted: usize,
    /// Largest number of logit buffers alive at once.
    pub peak_logit_buffers: usize,
}

fn check_len(model: &MultiTokenModel, batch: &TokenBatch) -> Result<()> {
    let n = model.n_future();
    if batch.seq_len() < n + 1 {
        return Err(MtpError::Data(format!(
            "sequence length {} is shorter than n_future + 1 = {}",
            batch.seq_len(),
            n + 1
        )));
    }
    Ok(())
}

fn counted(targets: &[usize]) -> usize {
    targets.iter().filter(|&&t| t != IGNORE_INDEX).count()
}

/// Forward-only multi-token loss: head `i` at position `t` is scored against
/// token `t+i`; positions without such a token are masked.
pub fn multi_token_loss(model: &MultiTokenModel, batch: &TokenBatch) -> Result<LossReport> {
    check_len(model, batch)?;
    let meter = BufferMeter::new();
    let mut g = Graph::no_grad().with_meter(meter.clone());
    let mut fwd = Forward::new(model, &mut g);
    let z = fwd.trunk(batch)?;
    let outs = fwd.head_outputs(z, batch.seq_len(), model.n_future())?;
    let mut per_head = Vec::with_capacity(outs.len());
    let mut tokens = 0;
    for (i, u) in outs.into_iter().enumerate() {
        let l = fwd.logits(u, i + 1)?;
        let targets = batch.shifted_targets(i + 1, IGNORE_INDEX);
        tokens += counted(&targets);
        let ce = fwd.graph().cross_entropy(l, &targets, IGNORE_INDEX)?;
        per_head.push(fwd.graph().scalar(ce)?);
        fwd.graph().free_node(l)?;
    }
    Ok(LossReport {
        total: per_head.iter().sum(),
        per_head,
        tokens_counted: tokens,
        peak_logit_buffers: meter.peak(),
    })
}

/// Accumulates `∂L_n/∂θ` into `model.params` under the given schedule and
/// reports the loss. Existing gradients are added to, not overwritten.
pub fn compute_gradients(
    model: &mut MultiTokenModel,
    batch: &TokenBatch,
    schedule: Schedule,
) -> Result<LossReport> {
    check_len(model, batch)?;
    match schedule {
        Schedule::NaiveJoint => naive_joint(model, batch),
        Schedule::SequentialHeads => match model.config().head_arch {
            HeadArch::Causal | HeadArch::Anticausal => sequential_chained(model, batch),
            _ => sequential_parallel(model, batch),
        },
    }
}

fn naive_joint(model: &mut MultiTokenModel, batch: &TokenBatch) -> Result<LossReport> {
    let meter = BufferMeter::new();
    let mut g = Graph::new().with_meter(meter.clone());
    let n = model.n_future();
    let mut per_head = Vec::with_capacity(n);
    let mut tokens = 0;
    {
        let mut fwd = Forward::new(model, &mut g);
        let z = fwd.trunk(batch)?;
        let outs = fwd.head_outputs(z, batch.seq_len(), n)?;
        let mut total: Option<NodeId> = None;
        for (i, u) in outs.into_iter().enumerate() {
            let l = fwd.logits(u, i + 1)?;
            let targets = batch.shifted_targets(i + 1, IGNORE_INDEX);
            tokens += counted(&targets);
            let ce = fwd.graph().cross_entropy(l, &targets, IGNORE_INDEX)?;
            per_head.push(fwd.graph().scalar(ce)?);
            total = Some(match total {
                None => ce,
                Some(t) => fwd.graph().add(t, ce)?,
            });
        }
        let total = total.expect("n_future >= 1");
        fwd.graph().backward(total)?;
    }
    model.params.collect_grads(&g);
    drop(g);
    Ok(LossReport {
        total: per_head.iter().sum(),
        per_head,
        tokens_counted: tokens,
        peak_logit_buffers: meter.peak(),
    })
}

fn trunk_graph(model: &MultiTokenModel, batch: &TokenBatch) -> Result<(Graph, NodeId)> {
    let mut g = Graph::new();
    let z = Forward::new(model, &mut g).trunk(batch)?;
    Ok((g, z))
}

/// Independent heads (parallel, linear, replicated unembedding): each head is
/// a separate graph rooted at a detached copy of `z`.
fn sequential_parallel(model: &mut MultiTokenModel, batch: &TokenBatch) -> Result<LossReport> {
    let meter = BufferMeter::new();
    let (mut trunk, z) = trunk_graph(model, batch)?;
    let z_val = trunk.value(z)?.detached();
    let mut z_grad = vec![0.0; z_val.len()];
    let n = model.n_future();
    let mut per_head = Vec::with_capacity(n);
    let mut tokens = 0;

    for i in 1..=n {
        let mut g = Graph::new().with_meter(meter.clone());
        let zl = g.leaf(z_val.clone().with_requires_grad(true));
        {
            let mut fwd = Forward::new(model, &mut g);
            let u = fwd.head_layer(i, zl, batch.seq_len())?;
            let l = fwd.logits(u, i)?;
            let targets = batch.shifted_targets(i, IGNORE_INDEX);
            tokens += counted(&targets);
            let ce = fwd.graph().cross_entropy(l, &targets, IGNORE_INDEX)?;
            per_head.push(fwd.graph().scalar(ce)?);
            fwd.graph().backward(ce)?;
        }
        model.params.collect_grads(&g);
        if let Some(gz) = g.grad(zl) {
            add_into(&mut z_grad, gz);
        }
        g.free_intermediates(&[]);
    }

    trunk.backward_from(z, &z_grad)?;
    model.params.collect_grads(&trunk);
    Ok(LossReport {
        total: per_head.iter().sum(),
        per_head,
        tokens_counted: tokens,
        peak_logit_buffers: meter.peak(),
    })
}

/// Causal and anticausal heads. Head layers are run forward along the chain,
/// each in its own graph and without logits. The backward pass starts at the
/// head furthest from the trunk; at every head the gradient arriving from its
/// successor is added to the gradient of the head's own loss before
/// backpropagating through the head layer.
fn sequential_chained(model: &mut MultiTokenModel, batch: &TokenBatch) -> Result<LossReport> {
    let meter = BufferMeter::new();
    let n = model.n_future();
    let seq = batch.seq_len();
    let chain: Vec<usize> = match model.config().head_arch {
        HeadArch::Causal => (1..=n).collect(),
        _ => (1..=n).rev().collect(),
    };

    let (mut trunk, z) = trunk_graph(model, batch)?;
    let mut input_val = trunk.value(z)?.detached();

    // Forward along the chain: (graph, input leaf, output node) per head.
    let mut links: Vec<(Graph, NodeId, NodeId)> = Vec::with_capacity(n);
    for &h in &chain {
        let mut g = Graph::new();
        let x = g.leaf(input_val.clone().with_requires_grad(true));
        let u = Forward::new(model, &mut g).head_layer(h, x, seq)?;
        input_val = g.value(u)?.detached();
        links.push((g, x, u));
    }

    let mut per_head = vec![0.0; n];
    let mut tokens = 0;
    let mut carried: Option<Vec<f64>> = None;
    for (pos, &h) in chain.iter().enumerate().rev() {
        let (g, x, u) = &mut links[pos];
        let u_val = g.value(*u)?.detached();

        let mut lg = Graph::new().with_meter(meter.clone());
        let ul = lg.leaf(u_val.with_requires_grad(true));
        {
            let mut fwd = Forward::new(model, &mut lg);
            let l = fwd.logits(ul, h)?;
            let targets = batch.shifted_targets(h, IGNORE_INDEX);
            tokens += counted(&targets);
            let ce = fwd.graph().cross_entropy(l, &targets, IGNORE_INDEX)?;
            per_head[h - 1] = fwd.graph().scalar(ce)?;
            fwd.graph().backward(ce)?;
        }
        model.params.collect_grads(&lg);
        let mut seed = lg
            .grad(ul)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; g.value(*u).map(|t| t.len()).unwrap_or(0)]);
        drop(lg);
        if let Some(c) = carried.take() {
            add_into(&mut seed, &c);
        }

        g.backward_from(*u, &seed)?;
        model.params.collect_grads(g);
        carried = Some(
            g.grad(*x)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; seed.len()]),
        );
        g.free_intermediates(&[]);
    }

    let z_grad = carried.expect("n_future >= 1");
    trunk.backward_from(z, &z_grad)?;
    model.params.collect_grads(&trunk);
    Ok(LossReport {
        total: per_head.iter().sum(),
        per_head,
        tokens_counted: tokens,
        peak_logit_buffers: meter.peak(),
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
