//! Information measures on finite joint distributions (in nats), the
//! relative mutual information and its cross-entropy identities, and an
//! implicit-weight counter for multi-token losses.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{MtpError, Result};
use crate::model::{MultiTokenModel, TokenBatch};

const SUM_TOL: f64 = 1e-12;

/// Joint distribution `p(x, y)` stored as a `|X|×|Y|` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    probs: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let cols = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || cols == 0 || probs.iter().any(|r| r.len() != cols) {
            return Err(MtpError::Contract("joint must be a non-empty rectangular matrix".into()));
        }
        if probs.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(MtpError::Contract("joint entries must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().flatten().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(MtpError::Contract(format!("joint sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative weights into a joint.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let total: f64 = weights.iter().flatten().sum();
        if !(total > 0.0) {
            return Err(MtpError::Contract("weights must have positive mass".into()));
        }
        let mut probs: Vec<Vec<f64>> = weights
            .into_iter()
            .map(|r| r.into_iter().map(|v| v / total).collect())
            .collect();
        // Put the rounding residue on the largest entry so the sum is 1.
        let residue = 1.0 - probs.iter().flatten().sum::<f64>();
        let (bi, bj) = argmax2(&probs);
        probs[bi][bj] += residue;
        Self::new(probs)
    }

    /// Random joint with Dirichlet(1)-like entries; `sparsity` is the chance
    /// that an entry is zero.
    pub fn random(rng: &mut impl Rng, nx: usize, ny: usize, sparsity: f64) -> Self {
        loop {
            let w: Vec<Vec<f64>> = (0..nx)
                .map(|_| {
                    (0..ny)
                        .map(|_| {
                            if rng.random::<f64>() < sparsity {
                                0.0
                            } else {
                                -(1.0 - rng.random::<f64>()).ln()
                            }
                        })
                        .collect()
                })
                .collect();
            if let Ok(j) = Self::from_weights(w) {
                return j;
            }
        }
    }

    /// `p_X ⊗ p_Y`.
    pub fn product(px: &[f64], py: &[f64]) -> Result<Self> {
        Self::from_weights(px.iter().map(|a| py.iter().map(|b| a * b).collect()).collect())
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.probs.len(), self.probs[0].len())
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        let (_, ny) = self.shape();
        (0..ny).map(|j| self.probs.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let (nx, ny) = self.shape();
        Self {
            probs: (0..ny).map(|j| (0..nx).map(|i| self.probs[i][j]).collect()).collect(),
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.probs.iter().flatten().copied().collect()
    }
}

fn argmax2(m: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    for (i, r) in m.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v > m[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    best
}

/// Ground truth `p` and model `q` over the same outcome space.
#[derive(Clone, Debug, PartialEq)]
pub struct DistPair {
    pub p: DiscreteJoint,
    pub q: DiscreteJoint,
}

impl DistPair {
    pub fn new(p: DiscreteJoint, q: DiscreteJoint) -> Result<Self> {
        if p.shape() != q.shape() {
            return Err(MtpError::Dimension {
                op: "dist_pair",
                left: vec![p.shape().0, p.shape().1],
                right: vec![q.shape().0, q.shape().1],
            });
        }
        Ok(Self { p, q })
    }

    fn transpose(&self) -> Self {
        Self {
            p: self.p.transpose(),
            q: self.q.transpose(),
        }
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `H(p, q) = −Σ p log q`; infinite divergence if `q = 0` where `p > 0`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(MtpError::InfiniteDivergence(format!(
                    "q[{i}] = 0 where p[{i}] = {a}"
                )));
            }
            h -= a * b.ln();
        }
    }
    Ok(h)
}

pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(cross_entropy(p, q)? - entropy(p))
}

pub fn joint_entropy(p: &DiscreteJoint) -> f64 {
    entropy(&p.flat())
}

pub fn joint_cross_entropy(p: &DiscreteJoint, q: &DiscreteJoint) -> Result<f64> {
    cross_entropy(&p.flat(), &q.flat())
}

pub fn joint_kl(p: &DiscreteJoint, q: &DiscreteJoint) -> Result<f64> {
    kl(&p.flat(), &q.flat())
}

/// `I(X; Y) = D_KL(p ‖ p_X ⊗ p_Y)`.
pub fn mutual_information(p: &DiscreteJoint) -> f64 {
    let prod = DiscreteJoint::product(&p.marginal_x(), &p.marginal_y()).expect("marginals");
    joint_kl(p, &prod).expect("p is absolutely continuous w.r.t. its marginal product")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `H(p_{X|Y}, q_{X|Y})`
    XGivenY,
    /// `H(p_{Y|X}, q_{Y|X})`
    YGivenX,
}

/// `Σ_y p(y) · H(p(·|y), q(·|y))` (or the `Y|X` analogue). Conditioning
/// values with `p = 0` contribute nothing.
pub fn conditional_cross_entropy(pair: &DistPair, direction: Direction) -> Result<f64> {
    let pair = match direction {
        Direction::XGivenY => pair.transpose(),
        Direction::YGivenX => pair.clone(),
    };
    // Rows now index the conditioning variable.
    let mut h = 0.0;
    for (prow, qrow) in pair.p.probs.iter().zip(&pair.q.probs) {
        let pm: f64 = prow.iter().sum();
        if pm <= 0.0 {
            continue;
        }
        let qm: f64 = qrow.iter().sum();
        if qm <= 0.0 {
            return Err(MtpError::InfiniteDivergence(
                "q gives zero mass to a conditioning value p supports".into(),
            ));
        }
        let pc: Vec<f64> = prow.iter().map(|v| v / pm).collect();
        let qc: Vec<f64> = qrow.iter().map(|v| v / qm).collect();
        h += pm * cross_entropy(&pc, &qc)?;
    }
    Ok(h)
}

pub fn conditional_entropy(p: &DiscreteJoint, direction: Direction) -> f64 {
    let pair = DistPair {
        p: p.clone(),
        q: p.clone(),
    };
    conditional_cross_entropy(&pair, direction).expect("q = p")
}

/// Relative mutual information computed two independent ways.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeMi {
    /// `D_KL(p ‖ q_X ⊗ q_Y) − D_KL(p ‖ q)`
    pub via_kl: f64,
    /// `H(p_X, q_X) + H(p_Y, q_Y) − H(p, q)`
    pub via_cross_entropy: f64,
}

impl RelativeMi {
    pub fn value(&self) -> f64 {
        self.via_kl
    }

    pub fn discrepancy(&self) -> f64 {
        (self.via_kl - self.via_cross_entropy).abs()
    }
}

pub fn relative_mutual_information(pair: &DistPair) -> Result<RelativeMi> {
    let (p, q) = (&pair.p, &pair.q);
    let (qx, qy) = (q.marginal_x(), q.marginal_y());
    let qprod = DiscreteJoint::product(&qx, &qy)?;
    let via_kl = joint_kl(p, &qprod)? - joint_kl(p, q)?;
    let via_cross_entropy = cross_entropy(&p.marginal_x(), &qx)?
        + cross_entropy(&p.marginal_y(), &qy)?
        - joint_cross_entropy(p, q)?;
    Ok(RelativeMi {
        via_kl,
        via_cross_entropy,
    })
}

/// Absolute residuals of the two cross-entropy identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaResiduals {
    /// `H(p_X, q_X) = H(p_{X|Y}, q_{X|Y}) + I_{p‖q}(X; Y)`
    pub lemma: f64,
    /// `H(p_X, q_X) + H(p_Y, q_Y) = H(p_{X|Y}, q_{X|Y}) + 2 I_{p‖q} + H(p_{Y|X}, q_{Y|X})`
    pub symmetrized: f64,
}

pub fn verify_lemma(pair: &DistPair) -> Result<LemmaResiduals> {
    let hx = cross_entropy(&pair.p.marginal_x(), &pair.q.marginal_x())?;
    let hy = cross_entropy(&pair.p.marginal_y(), &pair.q.marginal_y())?;
    let hxy = conditional_cross_entropy(pair, Direction::XGivenY)?;
    let hyx = conditional_cross_entropy(pair, Direction::YGivenX)?;
    let i = relative_mutual_information(pair)?.value();
    Ok(LemmaResiduals {
        lemma: (hx - (hxy + i)).abs(),
        symmetrized: (hx + hy - (hxy + 2.0 * i + hyx)).abs(),
    })
}

/// Residual of `H(X) + H(Y) = H(X|Y) + 2 I(X;Y) + H(Y|X)`.
pub fn decomposition_residual(p: &DiscreteJoint) -> f64 {
    let lhs = entropy(&p.marginal_x()) + entropy(&p.marginal_y());
    let rhs = conditional_entropy(p, Direction::XGivenY)
        + 2.0 * mutual_information(p)
        + conditional_entropy(p, Direction::YGivenX);
    (lhs - rhs).abs()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// The model's joint over the next two tokens for a class of contexts: for
/// each context, heads 1 and 2 at its last position give `q₁ ⊗ q₂` (the
/// heads are conditionally independent given the trunk state); the class
/// joint is the average over contexts.
pub fn model_head_joint(model: &MultiTokenModel, contexts: &[Vec<usize>]) -> Result<DiscreteJoint> {
    if model.n_future() < 2 {
        return Err(MtpError::Config("head joint needs a model with at least 2 heads".into()));
    }
    if contexts.is_empty() {
        return Err(MtpError::Data("no contexts for the head joint".into()));
    }
    let v = model.config().vocab_size;
    let mut acc = vec![vec![0.0; v]; v];
    for ctx in contexts {
        let logits = model.logits(&TokenBatch::single(ctx)?, 2)?;
        let last = ctx.len() - 1;
        let q1 = softmax(logits[0].row(last));
        let q2 = softmax(logits[1].row(last));
        for (a, row) in q1.iter().zip(acc.iter_mut()) {
            for (b, cell) in q2.iter().zip(row.iter_mut()) {
                *cell += a * b;
            }
        }
    }
    DiscreteJoint::from_weights(acc)
}

/// Empirical joint of observed `(next, second-next)` token pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalJoint {
    pub joint: DiscreteJoint,
    pub support: usize,
    /// Fewer observations than `min_support`.
    pub low_support: bool,
}

pub fn empirical_joint(pairs: &[(usize, usize)], vocab: usize, min_support: usize) -> Result<EmpiricalJoint> {
    if pairs.is_empty() {
        return Err(MtpError::Data("no observations for the empirical joint".into()));
    }
    let mut w = vec![vec![0.0; vocab]; vocab];
    for &(x, y) in pairs {
        if x >= vocab || y >= vocab {
            return Err(MtpError::Index(format!("pair ({x}, {y}) outside vocabulary {vocab}")));
        }
        w[x][y] += 1.0;
    }
    Ok(EmpiricalJoint {
        joint: DiscreteJoint::from_weights(w)?,
        support: pairs.len(),
        low_support: pairs.len() < min_support,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transition {
    /// Strongly determines the transitions that follow it.
    Choice,
    Inconsequential,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSequence {
    pub transitions: Vec<Transition>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImplicitWeights {
    pub weights: Vec<usize>,
    /// The count was cut short by a sequence boundary.
    pub truncated: Vec<bool>,
}

/// Counts, per transition, the teacher-forced loss terms that depend on it.
///
/// Position `s` emits terms `(s, i)` for `i = 1..=n`, targeting transition
/// `s + i − 1`. An inconsequential transition `j` is charged every term that
/// targets it. A choice transition `c` is additionally charged the terms
/// targeting its `n − 1` following transitions (its hard correlates) that
/// are emitted at or before `c`, since those can only be predicted by
/// predicting the choice itself.
pub fn implicit_weights(seq: &MarkedSequence) -> Result<ImplicitWeights> {
    let n = seq.n;
    if n == 0 {
        return Err(MtpError::Config("prediction horizon n must be >= 1".into()));
    }
    let len = seq.transitions.len();
    let mut weights = Vec::with_capacity(len);
    let mut truncated = Vec::with_capacity(len);
    for (j, kind) in seq.transitions.iter().enumerate() {
        let span = match kind {
            Transition::Choice => n,
            Transition::Inconsequential => 1,
        };
        let mut w = 0;
        for s in 0..len {
            for i in 1..=n {
                let target = s + i - 1;
                if target >= len {
                    continue;
                }
                let hits = target >= j && target < j + span && s <= j;
                if hits {
                    w += 1;
                }
            }
        }
        weights.push(w);
        truncated.push(j + 1 < n || j + span > len);
    }
    Ok(ImplicitWeights { weights, truncated })
}

/// The worked example: `1 2 3 4 5 A B C D`, where the step into `A` is the
/// only choice point.
pub fn example_sequence(n: usize) -> MarkedSequence {
    let mut transitions = vec![Transition::Inconsequential; 9];
    transitions[4] = Transition::Choice;
    MarkedSequence { transitions, n }
}

/// Plain-text and CSV renderings of a weight profile.
pub fn weights_report(seq: &MarkedSequence, w: &ImplicitWeights) -> (String, String) {
    let mut text = String::new();
    let mut csv = String::from("index,kind,weight,truncated\n");
    for (j, kind) in seq.transitions.iter().enumerate() {
        let name = match kind {
            Transition::Choice => "choice",
            Transition::Inconsequential => "inconsequential",
        };
        let _ = writeln!(
            text,
            "  t{j:<3} {name:<16} weight {:>3}{}",
            w.weights[j],
            if w.truncated[j] { "  (truncated)" } else { "" }
        );
        let _ = writeln!(csv, "{j},{name},{},{}", w.weights[j], w.truncated[j]);
    }
    (text, csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> DiscreteJoint {
        DiscreteJoint::from_weights(vec![vec![1.0; n]; n]).unwrap()
    }

    #[test]
    fn uniform_entropy() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_of_self_is_zero() {
        let p = [0.1, 0.2, 0.7];
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn perfectly_coupled() {
        let v = 5;
        let mut w = vec![vec![0.0; v]; v];
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let p = DiscreteJoint::from_weights(w).unwrap();
        assert!((mutual_information(&p) - (v as f64).ln()).abs() < 1e-12);
        assert!(conditional_entropy(&p, Direction::XGivenY).abs() < 1e-12);
        assert!(decomposition_residual(&p) < 1e-12);
    }

    #[test]
    fn zero_q_is_flagged() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], &[1.0, 0.0]),
            Err(MtpError::InfiniteDivergence(_))
        ));
    }

    #[test]
    fn uniform_heads_have_zero_relative_mi() {
        let mut r = crate::rng::stream(3, &[]);
        let p = DiscreteJoint::random(&mut r, 4, 4, 0.0);
        let pair = DistPair::new(p, uniform(4)).unwrap();
        assert!(relative_mutual_information(&pair).unwrap().value().abs() < 1e-12);
    }

    #[test]
    fn example_weights() {
        let w = implicit_weights(&example_sequence(3)).unwrap();
        assert_eq!(w.weights[4], 6);
        assert_eq!(w.weights[2], 3);
        assert!(!w.truncated[4] && !w.truncated[2]);
        let one = implicit_weights(&example_sequence(1)).unwrap();
        assert!(one.weights.iter().all(|&x| x == 1));
    }
}
