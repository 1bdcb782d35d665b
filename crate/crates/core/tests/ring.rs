//! The coefficient ring of the arithmetic task, checked against brute force.

mod common;

use common::{ints, naive_compose, naive_product, reduce};
use mtp::datagen::{ring_add, ring_compose, ring_mul, ring_neg, RingElem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(r: &mut ChaCha8Rng) -> RingElem {
    RingElem::random(r)
}

fn slot(slot: usize, v: i64) -> RingElem {
    let mut c = [0i64; 5];
    c[slot] = v;
    RingElem::new(c)
}

#[test]
fn coefficientwise_ops_exhaustive_per_slot() {
    for s in 0..5 {
        for a in 0..7i64 {
            let ea = slot(s, a);
            let n = ring_neg(ea);
            assert_eq!(n.coeffs[s] as i64, (7 - a) % 7);
            assert_eq!(ring_add(ea, n), RingElem::ZERO, "neg is the additive inverse");
            for b in 0..7i64 {
                let eb = slot(s, b);
                let sum = ring_add(ea, eb);
                assert_eq!(sum.coeffs[s] as i64, (a + b) % 7);
                assert_eq!(sum, ring_add(eb, ea));
                for c in 0..7i64 {
                    let ec = slot(s, c);
                    assert_eq!(ring_add(ring_add(ea, eb), ec), ring_add(ea, ring_add(eb, ec)));
                }
            }
        }
    }
}

#[test]
fn mul_and_compose_match_naive_substitution() {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let (p, q) = (random(&mut r), random(&mut r));
        assert_eq!(ring_mul(p, q).coeffs, reduce(&naive_product(&ints(p), &ints(q))));
        assert_eq!(ring_compose(p, q).coeffs, naive_compose(p, q), "p={p} q={q}");
    }
}

#[test]
fn mul_is_commutative_and_distributive() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let (a, b, c) = (random(&mut r), random(&mut r), random(&mut r));
        assert_eq!(ring_mul(a, b), ring_mul(b, a));
        assert_eq!(ring_mul(a, ring_add(b, c)), ring_add(ring_mul(a, b), ring_mul(a, c)));
    }
}

#[test]
fn identity_of_composition() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let p = random(&mut r);
        assert_eq!(ring_compose(p, RingElem::X), p);
        assert_eq!(ring_compose(RingElem::X, p), p);
    }
}

#[test]
fn documented_examples() {
    assert_eq!(ring_neg(RingElem::new([1, 2, 3, 0, 0])).coeffs, [6, 5, 4, 0, 0]);
    let one_plus_x = RingElem::new([1, 1, 0, 0, 0]);
    assert_eq!(ring_mul(one_plus_x, one_plus_x).coeffs, [1, 2, 1, 0, 0]);
    let x3 = RingElem::new([0, 0, 0, 1, 0]);
    assert_eq!(ring_mul(x3, x3), RingElem::ZERO);
    assert_eq!(ring_compose(RingElem::new([0, 0, 1, 0, 0]), one_plus_x).coeffs, [1, 2, 1, 0, 0]);
}

fn elem() -> impl Strategy<Value = RingElem> {
    proptest::array::uniform5(0i64..7).prop_map(RingElem::new)
}

proptest! {
    #[test]
    fn coefficients_stay_in_range(a in elem(), b in elem()) {
        for e in [ring_neg(a), ring_add(a, b), ring_mul(a, b), ring_compose(a, b)] {
            prop_assert!(e.coeffs.iter().all(|&c| c < 7));
        }
    }

    #[test]
    fn compose_is_a_ring_map_in_its_first_argument(p in elem(), r in elem(), q in elem()) {
        prop_assert_eq!(ring_compose(ring_add(p, r), q), ring_add(ring_compose(p, q), ring_compose(r, q)));
        // Truncating before substituting only commutes with products when
        // q has no constant term, i.e. q lies in the ideal (X).
        let mut q = q;
        q.coeffs[0] = 0;
        prop_assert_eq!(ring_compose(ring_mul(p, r), q), ring_mul(ring_compose(p, q), ring_compose(r, q)));
    }
}
