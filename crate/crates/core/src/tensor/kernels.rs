//! Raw numeric kernels over row-major `f64` slices.
//!
//! Every kernel computes each output row with an accumulation order that does
//! not depend on how many rows are processed together. Decoding relies on this:
//! a prefix of a longer sequence must produce bit-identical logits.

pub(crate) const RMS_EPS: f64 = 1e-5;

/// `c = a · b` (or `c += a · b` when `accumulate`), with `a` logically `m×k`
/// and `b` logically `k×n`. `a_t`/`b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: lengths are checked above; strides describe exactly the
    // row-major (or transposed row-major) layouts of the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise RMS normalisation. Returns the output and each row's `1/rms`.
pub(crate) fn rms_norm_forward(x: &[f64], gain: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let ir = 1.0 / (ms + RMS_EPS).sqrt();
        inv.push(ir);
        for ((yo, xv), g) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gain) {
            *yo = g * xv * ir;
        }
    }
    (y, inv)
}

/// Accumulates input and gain gradients of [`rms_norm_forward`].
pub(crate) fn rms_norm_backward(
    x: &[f64],
    gain: &[f64],
    inv: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dgain: Option<&mut [f64]>,
) {
    let d = gain.len();
    if let Some(dx) = dx {
        for (r, &ir) in inv.iter().enumerate() {
            let xr = &x[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let dot: f64 = xr.iter().zip(dyr).zip(gain).map(|((x, dy), g)| x * dy * g).sum();
            let coef = ir * ir * ir * dot / d as f64;
            for c in 0..d {
                dx[r * d + c] += ir * gain[c] * dyr[c] - coef * xr[c];
            }
        }
    }
    if let Some(dg) = dgain {
        for (r, &ir) in inv.iter().enumerate() {
            for c in 0..d {
                dg[c] += dy[r * d + c] * x[r * d + c] * ir;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Rotates interleaved pairs `(2i, 2i+1)` of every head by `pos · base^(-2i/hd)`.
/// `inverse` applies the transpose rotation, which is what the backward pass needs.
pub(crate) fn apply_rope(x: &mut [f64], dims: AttnDims, base: f64, inverse: bool) {
    let hd = dims.head_dim;
    let d = dims.d_model();
    let half = hd / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| base.powf(-(2.0 * i as f64) / hd as f64))
        .collect();
    for b in 0..dims.batch {
        for t in 0..dims.seq {
            let row = &mut x[(b * dims.seq + t) * d..(b * dims.seq + t + 1) * d];
            for (i, f) in freqs.iter().enumerate() {
                let (s, c) = (t as f64 * f).sin_cos();
                let s = if inverse { -s } else { s };
                for h in 0..dims.heads {
                    let j = h * hd + 2 * i;
                    let (x0, x1) = (row[j], row[j + 1]);
                    row[j] = x0 * c - x1 * s;
                    row[j + 1] = x0 * s + x1 * c;
                }
            }
        }
    }
}

/// Causal scaled dot-product attention over already-rotated `q`, `k`.
/// Returns the concatenated head outputs and the attention probabilities
/// laid out as `[batch][head][query][key]` (upper triangle zero).
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dims: AttnDims,
) -> (Vec<f64>, Vec<f64>) {
    let AttnDims {
        batch,
        seq,
        heads,
        head_dim: hd,
    } = dims;
    let d = dims.d_model();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; batch * seq * d];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for t in 0..seq {
                let qrow = &q[(b * seq + t) * d + h * hd..][..hd];
                let prow = &mut probs[pbase + t * seq..pbase + (t + 1) * seq];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=t {
                    let krow = &k[(b * seq + j) * d + h * hd..][..hd];
                    let s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                    prow[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut z = 0.0;
                for p in prow.iter_mut().take(t + 1) {
                    *p = (*p - max).exp();
                    z += *p;
                }
                for p in prow.iter_mut().take(t + 1) {
                    *p /= z;
                }
                let orow = &mut out[(b * seq + t) * d + h * hd..][..hd];
                for j in 0..=t {
                    let p = prow[j];
                    let vrow = &v[(b * seq + j) * d + h * hd..][..hd];
                    for (o, vv) in orow.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] with respect to rotated `q`, `k` and `v`.
pub(crate) fn attention_backward(
    dout: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dims: AttnDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttnDims {
        batch,
        seq,
        heads,
        head_dim: hd,
    } = dims;
    let d = dims.d_model();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let pbase = (b * heads + h) * seq * seq;
            for t in 0..seq {
                let prow = &probs[pbase + t * seq..pbase + (t + 1) * seq];
                let dorow = &dout[(b * seq + t) * d + h * hd..][..hd];
                let mut dot = 0.0;
                for j in 0..=t {
                    let off = (b * seq + j) * d + h * hd;
                    let vrow = &v[off..off + hd];
                    dp[j] = dorow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    dot += dp[j] * prow[j];
                    for (dvv, g) in dv[off..off + hd].iter_mut().zip(dorow) {
                        *dvv += prow[j] * g;
                    }
                }
                let qoff = (b * seq + t) * d + h * hd;
                for j in 0..=t {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = (b * seq + j) * d + h * hd;
                    for c in 0..hd {
                        dq[qoff + c] += ds * k[koff + c];
                        dk[koff + c] += ds * q[qoff + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Mean softmax cross-entropy over rows whose target is not `ignore_index`.
/// Returns `(loss, counted_rows)`; the loss is 0 when nothing is counted.
pub(crate) fn cross_entropy_forward(
    logits: &[f64],
    vocab: usize,
    targets: &[usize],
    ignore_index: usize,
) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == ignore_index {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        total += neg_log_softmax(row, t);
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as f64, count)
    }
}

pub(crate) fn cross_entropy_backward(
    logits: &[f64],
    vocab: usize,
    targets: &[usize],
    ignore_index: usize,
    count: usize,
    upstream: f64,
    dlogits: &mut [f64],
) {
    if count == 0 {
        return;
    }
    let w = upstream / count as f64;
    for (r, &t) in targets.iter().enumerate() {
        if t == ignore_index {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let lse = log_sum_exp(row);
        let drow = &mut dlogits[r * vocab..(r + 1) * vocab];
        for (dv, &x) in drow.iter_mut().zip(row) {
            *dv += w * (x - lse).exp();
        }
        drow[t] -= w;
    }
}

/// `−log softmax(row)[t]`, split as `(max − row[t]) + ln(1 + Σ_{j≠argmax} e^{x_j−max})`
/// so that near-certain predictions keep full relative precision.
pub(crate) fn neg_log_softmax(row: &[f64], t: usize) -> f64 {
    let top = argmax(row);
    let max = row[top];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max - row[t]) + rest.ln_1p()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
