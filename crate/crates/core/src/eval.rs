//! Task metrics: exact-match accuracy per operator count on the arithmetic
//! task, and second-name-token accuracy on the induction task.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::datagen::{poly_vocab, InductionEvalSpec, PolySample, DEGREE};
use crate::decoding::HeadPredictor;
use crate::error::{MtpError, Result};

/// Rows per forward when scoring.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct BucketAccuracy {
    pub m: usize,
    pub samples: usize,
    pub exact: usize,
    pub accuracy: f64,
    /// Per-digit accuracy with the true preceding digits supplied.
    pub digit_accuracy: f64,
}

/// Exact match of all answer digits under greedy decoding.
///
/// Computed with a single teacher-forced forward per sample: greedy decoding
/// reproduces the answer exactly iff head 1's argmax is correct at every
/// answer position when fed the true preceding digits, since up to the
/// first mistake the greedy prefix and the true prefix coincide.
pub fn poly_bucket(model: &dyn HeadPredictor, m: usize, samples: &[PolySample]) -> Result<BucketAccuracy> {
    if samples.is_empty() {
        return Err(MtpError::Data(format!("test set for m = {m} is empty")));
    }
    let mut by_len: BTreeMap<usize, Vec<&PolySample>> = BTreeMap::new();
    for s in samples {
        by_len.entry(s.prompt().len()).or_default().push(s);
    }
    let (mut exact, mut digits) = (0, 0);
    for (prompt_len, group) in by_len {
        for chunk in group.chunks(CHUNK) {
            // Answer digits only; the trailing end token is not scored.
            let rows: Vec<Vec<usize>> = chunk
                .iter()
                .map(|s| s.tokens()[..prompt_len + DEGREE - 1].to_vec())
                .collect();
            let preds = model.predict_rows(&rows, 1, prompt_len - 1)?;
            for (s, p) in chunk.iter().zip(preds) {
                let right = s
                    .answer_tokens
                    .iter()
                    .zip(&p)
                    .filter(|(a, q)| **a == q[0])
                    .count();
                digits += right;
                exact += usize::from(right == DEGREE);
            }
        }
    }
    let n = samples.len();
    Ok(BucketAccuracy {
        m,
        samples: n,
        exact,
        accuracy: exact as f64 / n as f64,
        digit_accuracy: digits as f64 / (n * DEGREE) as f64,
    })
}

pub fn poly_accuracy(
    model: &dyn HeadPredictor,
    test_sets: &[(usize, Vec<PolySample>)],
) -> Result<Vec<BucketAccuracy>> {
    if test_sets.is_empty() {
        return Err(MtpError::Data("no test sets to evaluate".into()));
    }
    test_sets.iter().map(|(m, s)| poly_bucket(model, *m, s)).collect()
}

/// Mean accuracy over buckets with `m` inside / outside `1..=train_m_max`.
pub fn in_and_out_of_domain(buckets: &[BucketAccuracy], train_m_max: usize) -> (f64, f64) {
    let mean = |it: Vec<f64>| {
        if it.is_empty() {
            f64::NAN
        } else {
            it.iter().sum::<f64>() / it.len() as f64
        }
    };
    let ind = buckets.iter().filter(|b| b.m <= train_m_max).map(|b| b.accuracy).collect();
    let ood = buckets.iter().filter(|b| b.m > train_m_max).map(|b| b.accuracy).collect();
    (mean(ind), mean(ood))
}

pub fn poly_csv(buckets: &[BucketAccuracy]) -> String {
    let mut out = String::from("m,samples,exact,accuracy,digit_accuracy\n");
    for b in buckets {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            b.m, b.samples, b.exact, b.accuracy, b.digit_accuracy
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct InductionAccuracy {
    pub scored: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Teacher-forced head-1 accuracy on second name tokens that follow an
/// earlier mention of the same name.
pub fn induction_accuracy(model: &dyn HeadPredictor, spec: &InductionEvalSpec) -> Result<InductionAccuracy> {
    let scored: Vec<_> = spec.scored().copied().collect();
    if scored.is_empty() {
        return Err(MtpError::Data("induction eval spec has no scored positions".into()));
    }
    let mut by_story: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for p in &scored {
        by_story.entry(p.sequence).or_default().push(p.position);
    }
    let stories: Vec<usize> = by_story.keys().copied().collect();
    let mut correct = 0;
    for chunk in stories.chunks(CHUNK) {
        // Pad with the end token: causal predictions are unaffected.
        let width = chunk.iter().map(|&s| spec.corpus[s].len()).max().unwrap_or(0);
        let rows: Vec<Vec<usize>> = chunk
            .iter()
            .map(|&s| {
                let mut r = spec.corpus[s].clone();
                r.resize(width, crate::datagen::InductionConfig::EOS_ID);
                r
            })
            .collect();
        let preds = model.predict_rows(&rows, 1, 0)?;
        for (&s, p) in chunk.iter().zip(&preds) {
            for &pos in &by_story[&s] {
                correct += usize::from(p[pos - 1][0] == spec.corpus[s][pos]);
            }
        }
    }
    Ok(InductionAccuracy {
        scored: scored.len(),
        correct,
        accuracy: correct as f64 / scored.len() as f64,
    })
}

/// Answers every arithmetic prompt correctly by looking the sample up; used
/// to check the scoring harness itself.
pub struct ReplayOracle {
    answers: BTreeMap<Vec<usize>, [usize; DEGREE]>,
    context_len: usize,
}

impl ReplayOracle {
    pub fn new(samples: &[PolySample], context_len: usize) -> Self {
        Self {
            answers: samples.iter().map(|s| (s.prompt(), s.answer_tokens)).collect(),
            context_len,
        }
    }
}

impl HeadPredictor for ReplayOracle {
    fn n_heads(&self) -> usize {
        1
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn predict(&self, tokens: &[usize], _k: usize, from: usize) -> Result<Vec<Vec<usize>>> {
        let eq = tokens
            .iter()
            .position(|&t| t == poly_vocab::EQUALS)
            .ok_or_else(|| MtpError::Data("prompt has no '='".into()))?;
        let answer = self
            .answers
            .get(&tokens[..=eq])
            .ok_or_else(|| MtpError::Data("prompt not in replay table".into()))?;
        Ok((from..tokens.len())
            .map(|p| {
                let i = p - eq;
                vec![if i < DEGREE { answer[i] } else { poly_vocab::EOS }]
            })
            .collect())
    }
}
