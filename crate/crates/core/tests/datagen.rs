mod common;

use std::collections::HashSet;

use common::naive_eval_question;
use mtp::datagen::{
    bigram_copy_prediction, byte_detokenize, byte_tokenize, gen_expr, parse, poly_vocab, serialize, BinOp,
    InductionConfig, PolyConfig, PolyExpr, BYTE_VOCAB,
};
use mtp::MtpError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn count_ops(e: &PolyExpr, hist: &mut [usize; 4]) {
    match e {
        PolyExpr::Leaf(_) => {}
        PolyExpr::Neg(c) => {
            hist[0] += 1;
            count_ops(c, hist);
        }
        PolyExpr::Bin(op, l, r) => {
            hist[match op {
                BinOp::Add => 1,
                BinOp::Mul => 2,
                BinOp::Compose => 3,
            }] += 1;
            count_ops(l, hist);
            count_ops(r, hist);
        }
    }
}

#[test]
fn operator_histogram_is_uniform() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut hist = [0usize; 4];
    for _ in 0..10_000 {
        let e = gen_expr(3, &mut r).unwrap();
        assert_eq!(e.ops(), 3);
        count_ops(&e, &mut hist);
    }
    let n = hist.iter().sum::<usize>() as f64;
    assert_eq!(n, 30_000.0);
    let (mean, sd) = (n / 4.0, (n * 0.25 * 0.75).sqrt());
    for (i, &c) in hist.iter().enumerate() {
        assert!((c as f64 - mean).abs() < 3.0 * sd, "operator {i}: {c} vs {mean} ± {sd}");
    }
}

#[test]
fn every_label_rechecks_against_independent_evaluator() {
    let cfg = PolyConfig {
        test_per_m: 300,
        pause_count: 2,
        ..PolyConfig::default()
    };
    for (m, set) in cfg.test_sets().unwrap() {
        assert_eq!(set.len(), 300);
        for s in &set {
            assert_eq!(s.m, m);
            let expected = naive_eval_question(&s.question_tokens);
            let got: Vec<u8> = s.answer_tokens.iter().map(|&d| d as u8).collect();
            assert_eq!(got, expected);
            assert!(s.len() <= cfg.context_len);
        }
    }
    for step in 0..20 {
        let row = cfg.train_row(step, 0, 96).unwrap();
        assert_eq!(row.len(), 96);
        assert!(row.iter().all(|&t| t < poly_vocab::VOCAB_SIZE));
    }
}

#[test]
fn sample_layout() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let e = gen_expr(4, &mut r).unwrap();
    let s = serialize(&e, 5);
    let t = s.tokens();
    assert_eq!(t[0], poly_vocab::BOS);
    assert_eq!(*t.last().unwrap(), poly_vocab::EOS);
    let eq = t.iter().position(|&x| x == poly_vocab::EQUALS).unwrap();
    assert!(t[eq - 5..eq].iter().all(|&x| x == poly_vocab::PAUSE));
    assert_eq!(t.iter().filter(|&&x| x == poly_vocab::PAUSE).count(), 5);
    assert_eq!(t.len(), eq + 1 + 5 + 1);
    assert_eq!(*s.prompt().last().unwrap(), poly_vocab::EQUALS);
}

#[test]
fn test_sets_are_deterministic_and_disjoint_from_training() {
    let cfg = PolyConfig {
        test_per_m: 200,
        ..PolyConfig::default()
    };
    assert_eq!(cfg.test_set(4).unwrap(), cfg.test_set(4).unwrap());
    for m in 3..=5 {
        let overlap = cfg.train_test_overlap(m, 20_000).unwrap();
        assert!(overlap < 0.01, "m={m}: overlap {overlap}");
    }
    let same = PolyConfig {
        train_seed: 7,
        test_seed: 7,
        ..cfg
    };
    assert!(matches!(same.test_sets(), Err(MtpError::Config(_))));
}

#[test]
fn induction_positions_and_copy_oracle() {
    let cfg = InductionConfig::default();
    let spec = cfg.eval_spec().unwrap();
    let mut scored = 0;
    for p in spec.scored() {
        let seq = &spec.corpus[p.sequence];
        let (first, second) = (seq[p.position - 1], seq[p.position]);
        assert!(cfg.is_second_name_token(second));
        let earlier = (0..p.position - 1).any(|i| seq[i] == first && seq[i + 1] == second);
        assert!(earlier, "no earlier mention at {p:?}");
        assert_eq!(bigram_copy_prediction(&seq[..p.position]), Some(second));
        scored += 1;
    }
    assert!(scored > 300, "only {scored} scored positions");
    assert!(spec.name_positions.iter().any(|p| !p.prior_mention));
}

#[test]
fn eval_names_are_unseen_in_training() {
    let cfg = InductionConfig::default();
    let (train, eval) = cfg.name_split().unwrap();
    let train: HashSet<_> = train.into_iter().collect();
    let spec = cfg.eval_spec().unwrap();
    let used: HashSet<[usize; 2]> = spec
        .name_positions
        .iter()
        .map(|p| {
            let s = &spec.corpus[p.sequence];
            [s[p.position - 1], s[p.position]]
        })
        .collect();
    assert!(used.iter().all(|n| eval.contains(n)));
    let unseen = used.iter().filter(|n| !train.contains(*n)).count() as f64 / used.len() as f64;
    assert!(unseen > 0.95, "{unseen}");
}

#[test]
fn byte_examples() {
    assert_eq!(byte_tokenize(b"ab"), vec![97, 98]);
    assert_eq!(byte_detokenize(&[97, 98]).unwrap(), b"ab");
    assert!(byte_tokenize(b"").is_empty());
    assert!(matches!(byte_detokenize(&[BYTE_VOCAB]), Err(MtpError::Index(_))));
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let blob: Vec<u8> = (0..1024).map(|_| r.random()).collect();
    assert_eq!(byte_detokenize(&byte_tokenize(&blob)).unwrap(), blob);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_inverts_serialize(seed in any::<u64>(), m in 1usize..8, pauses in 0usize..4) {
        let e = gen_expr(m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let s = serialize(&e, pauses);
        let back = parse(&s.question_tokens).unwrap();
        prop_assert_eq!(back.ops(), m);
        prop_assert_eq!(back.eval(), e.eval());
        prop_assert_eq!(s.pause_count, pauses);
    }

    #[test]
    fn byte_round_trip(data in proptest::collection::vec(any::<u8>(), 0..256)) {
        prop_assert_eq!(byte_detokenize(&byte_tokenize(&data)).unwrap(), data);
    }
}
