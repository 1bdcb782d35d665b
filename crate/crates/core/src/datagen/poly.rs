use std::collections::HashSet;

use rand::Rng;

use super::ring::{ring_add, ring_compose, ring_mul, ring_neg, RingElem, DEGREE, P};
use crate::error::{MtpError, Result};
use crate::model::TokenBatch;
use crate::rng;
use crate::training::BatchSource;

pub const PLUS: usize = 7;
pub const TIMES: usize = 8;
pub const MINUS: usize = 9;
pub const COMPOSE: usize = 10;
pub const LPAREN: usize = 11;
pub const RPAREN: usize = 12;
pub const EQUALS: usize = 13;
pub const PAUSE: usize = 14;
pub const BOS: usize = 15;
pub const EOS: usize = 16;
pub const VOCAB_SIZE: usize = 17;

/// Display glyph of every token id, indexed by id.
pub const GLYPHS: [&str; VOCAB_SIZE] = [
    "0", "1", "2", "3", "4", "5", "6", "+", "*", "-", "∘", "(", ")", "=", "<pause>", "<bos>",
    "<eos>",
];

pub fn render(ids: &[usize]) -> String {
    ids.iter()
        .map(|&i| GLYPHS.get(i).copied().unwrap_or("<?>"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Mul,
    Compose,
}

impl BinOp {
    fn token(self) -> usize {
        match self {
            BinOp::Add => PLUS,
            BinOp::Mul => TIMES,
            BinOp::Compose => COMPOSE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PolyExpr {
    Leaf(RingElem),
    Neg(Box<PolyExpr>),
    Bin(BinOp, Box<PolyExpr>, Box<PolyExpr>),
}

impl PolyExpr {
    /// Number of operator nodes.
    pub fn ops(&self) -> usize {
        match self {
            PolyExpr::Leaf(_) => 0,
            PolyExpr::Neg(c) => 1 + c.ops(),
            PolyExpr::Bin(_, l, r) => 1 + l.ops() + r.ops(),
        }
    }

    pub fn eval(&self) -> RingElem {
        match self {
            PolyExpr::Leaf(e) => *e,
            PolyExpr::Neg(c) => ring_neg(c.eval()),
            PolyExpr::Bin(op, l, r) => {
                let (a, b) = (l.eval(), r.eval());
                match op {
                    BinOp::Add => ring_add(a, b),
                    BinOp::Mul => ring_mul(a, b),
                    BinOp::Compose => ring_compose(a, b),
                }
            }
        }
    }

    fn write_tokens(&self, out: &mut Vec<usize>) {
        match self {
            PolyExpr::Leaf(e) => out.extend(e.coeffs.iter().map(|&c| c as usize)),
            PolyExpr::Neg(c) => {
                out.extend([LPAREN, MINUS]);
                c.write_tokens(out);
                out.push(RPAREN);
            }
            PolyExpr::Bin(op, l, r) => {
                out.push(LPAREN);
                l.write_tokens(out);
                out.push(op.token());
                r.write_tokens(out);
                out.push(RPAREN);
            }
        }
    }

    /// Fully parenthesised infix tokens.
    pub fn tokens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.write_tokens(&mut out);
        out
    }
}

/// Random expression with exactly `m` operators. The root operator is uniform
/// over {neg, add, mul, compose}; negation hands `m−1` operators to its child,
/// binary operators split them `(j, m−1−j)` with `j` uniform; leaves are
/// uniform ring elements.
pub fn gen_expr(m: usize, rng: &mut impl Rng) -> Result<PolyExpr> {
    if m < 1 {
        return Err(MtpError::Config("expressions need at least one operator".into()));
    }
    Ok(gen_subtree(m, rng))
}

fn gen_subtree(m: usize, rng: &mut impl Rng) -> PolyExpr {
    if m == 0 {
        return PolyExpr::Leaf(RingElem::random(rng));
    }
    let op = rng.random_range(0..4);
    if op == 0 {
        return PolyExpr::Neg(Box::new(gen_subtree(m - 1, rng)));
    }
    let j = rng.random_range(0..m);
    let l = gen_subtree(j, rng);
    let r = gen_subtree(m - 1 - j, rng);
    let op = [BinOp::Add, BinOp::Mul, BinOp::Compose][op - 1];
    PolyExpr::Bin(op, Box::new(l), Box::new(r))
}

/// One arithmetic example: `BOS question PAUSE× = a₀…a₄ EOS`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolySample {
    pub question_tokens: Vec<usize>,
    pub pause_count: usize,
    pub answer_tokens: [usize; DEGREE],
    pub m: usize,
}

impl PolySample {
    /// Everything up to and including `=`: what a solver is shown.
    pub fn prompt(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.question_tokens.len() + self.pause_count + 2);
        out.push(BOS);
        out.extend(&self.question_tokens);
        out.extend(std::iter::repeat_n(PAUSE, self.pause_count));
        out.push(EQUALS);
        out
    }

    pub fn tokens(&self) -> Vec<usize> {
        let mut out = self.prompt();
        out.extend(self.answer_tokens);
        out.push(EOS);
        out
    }

    pub fn len(&self) -> usize {
        self.question_tokens.len() + self.pause_count + DEGREE + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn serialize(expr: &PolyExpr, pause_count: usize) -> PolySample {
    let answer = expr.eval().coeffs.map(|c| c as usize);
    PolySample {
        question_tokens: expr.tokens(),
        pause_count,
        answer_tokens: answer,
        m: expr.ops(),
    }
}

/// Parses a question (the tokens between `BOS` and the pauses/`=`).
pub fn parse(tokens: &[usize]) -> Result<PolyExpr> {
    let mut pos = 0;
    let e = parse_at(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(MtpError::Data(format!("trailing tokens after position {pos}")));
    }
    Ok(e)
}

fn parse_at(t: &[usize], pos: &mut usize) -> Result<PolyExpr> {
    let bad = |p: usize| MtpError::Data(format!("unexpected token at position {p}"));
    match t.get(*pos) {
        Some(&LPAREN) => {
            *pos += 1;
            if t.get(*pos) == Some(&MINUS) {
                *pos += 1;
                let c = parse_at(t, pos)?;
                expect(t, pos, RPAREN)?;
                return Ok(PolyExpr::Neg(Box::new(c)));
            }
            let l = parse_at(t, pos)?;
            let op = match t.get(*pos) {
                Some(&PLUS) => BinOp::Add,
                Some(&TIMES) => BinOp::Mul,
                Some(&COMPOSE) => BinOp::Compose,
                _ => return Err(bad(*pos)),
            };
            *pos += 1;
            let r = parse_at(t, pos)?;
            expect(t, pos, RPAREN)?;
            Ok(PolyExpr::Bin(op, Box::new(l), Box::new(r)))
        }
        Some(&d) if d < P as usize => {
            let digits = t.get(*pos..*pos + DEGREE).ok_or_else(|| bad(*pos))?;
            if digits.iter().any(|&x| x >= P as usize) {
                return Err(bad(*pos));
            }
            *pos += DEGREE;
            let mut c = [0i64; DEGREE];
            for (dst, &src) in c.iter_mut().zip(digits) {
                *dst = src as i64;
            }
            Ok(PolyExpr::Leaf(RingElem::new(c)))
        }
        _ => Err(bad(*pos)),
    }
}

fn expect(t: &[usize], pos: &mut usize, want: usize) -> Result<()> {
    if t.get(*pos) == Some(&want) {
        *pos += 1;
        Ok(())
    } else {
        Err(MtpError::Data(format!("expected {} at position {}", GLYPHS[want], *pos)))
    }
}

/// Arithmetic task settings. Test sets come from `test_seed`, the training
/// stream from `train_seed`; the two must differ.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyConfig {
    pub train_m: (usize, usize),
    pub eval_m_max: usize,
    pub test_per_m: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub pause_count: usize,
    pub context_len: usize,
}

impl Default for PolyConfig {
    fn default() -> Self {
        Self {
            train_m: (1, 5),
            eval_m_max: 9,
            test_per_m: 2000,
            train_seed: 0,
            test_seed: 1_000_003,
            pause_count: 0,
            context_len: 96,
        }
    }
}

impl PolyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let (lo, hi) = self.train_m;
        if lo < 1 || lo > hi {
            problems.push(format!("train m range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        if self.eval_m_max < 1 {
            problems.push("eval m_max must be >= 1".into());
        }
        if self.train_seed == self.test_seed {
            problems.push(format!(
                "train seed and test seed must differ (both {})",
                self.train_seed
            ));
        }
        if self.context_len < self.shortest(1) {
            problems.push(format!(
                "context_len {} cannot hold even a one-operator sample",
                self.context_len
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(MtpError::Config(problems.join("; ")))
        }
    }

    /// Length of the shortest serialised sample with `m` operators
    /// (a chain of negations around one leaf).
    fn shortest(&self, m: usize) -> usize {
        DEGREE + 3 * m + self.pause_count + DEGREE + 3
    }

    /// A sample with `m` operators that fits the context window.
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<PolySample> {
        if self.context_len < self.shortest(m) {
            return Err(MtpError::Config(format!(
                "context_len {} cannot hold any sample with m = {m}",
                self.context_len
            )));
        }
        loop {
            let s = serialize(&gen_expr(m, rng)?, self.pause_count);
            if s.len() <= self.context_len {
                return Ok(s);
            }
        }
    }

    /// Fixed test set for one operator count.
    pub fn test_set(&self, m: usize) -> Result<Vec<PolySample>> {
        let mut r = rng::stream(self.test_seed, &[rng::purpose("poly-test"), m as u64]);
        (0..self.test_per_m).map(|_| self.sample(m, &mut r)).collect()
    }

    /// Test sets for `m = 1..=eval_m_max`.
    pub fn test_sets(&self) -> Result<Vec<(usize, Vec<PolySample>)>> {
        self.validate()?;
        (1..=self.eval_m_max)
            .map(|m| Ok((m, self.test_set(m)?)))
            .collect()
    }

    /// Training row `row` of step `step`: fresh samples with `m` uniform in
    /// the training range, concatenated and cut to `seq_len` tokens.
    pub fn train_row(&self, step: u64, row: usize, seq_len: usize) -> Result<Vec<usize>> {
        let mut r = rng::stream(
            self.train_seed,
            &[rng::purpose("poly-train"), step, row as u64],
        );
        let mut out = Vec::with_capacity(seq_len + self.context_len);
        while out.len() < seq_len {
            let m = r.random_range(self.train_m.0..=self.train_m.1);
            out.extend(self.sample(m, &mut r)?.tokens());
        }
        out.truncate(seq_len);
        Ok(out)
    }

    /// Fraction of test questions with `m` operators that also occur among
    /// `train_samples` freshly drawn training samples of the same `m`.
    pub fn train_test_overlap(&self, m: usize, train_samples: usize) -> Result<f64> {
        let test: HashSet<Vec<usize>> =
            self.test_set(m)?.into_iter().map(|s| s.question_tokens).collect();
        let mut r = rng::stream(self.train_seed, &[rng::purpose("poly-overlap"), m as u64]);
        let mut train = HashSet::new();
        for _ in 0..train_samples {
            train.insert(self.sample(m, &mut r)?.question_tokens);
        }
        Ok(test.intersection(&train).count() as f64 / test.len().max(1) as f64)
    }
}

impl BatchSource for PolyConfig {
    fn batch(&self, step: u64, rows: usize, seq_len: usize) -> Result<TokenBatch> {
        TokenBatch::new(
            (0..rows)
                .map(|r| self.train_row(step, r, seq_len))
                .collect::<Result<_>>()?,
        )
    }
}
