mod common;

use common::{param_values, tiny_run, train_run};
use mtp::checkpoint::{self, Checkpoint, NamedTensor};
use mtp::MtpError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained() -> (Checkpoint, Vec<Vec<f64>>) {
    let run = tiny_run(&[("train.steps", "6"), ("train.warmup_steps", "2")]);
    let (t, _) = train_run(&run);
    (checkpoint::from_trainer(&t, &run), param_values(&t.model))
}

#[test]
fn round_trip_is_bit_exact() {
    let (ckpt, params) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mtpc");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let (model, _) = checkpoint::load_model(&back).unwrap();
    let restored = param_values(&model);
    for (a, b) in restored.iter().flatten().zip(params.iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(back.encode(), ckpt.encode());
}

#[test]
fn single_byte_corruption_is_always_detected() {
    let (ckpt, _) = trained();
    let bytes = ckpt.encode();
    let mut r = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let mut bad = bytes.clone();
        let at = r.random_range(0..bad.len());
        let flip: u8 = r.random_range(1..=255);
        bad[at] ^= flip;
        assert!(Checkpoint::decode(&bad).is_err(), "flip at {at} went unnoticed");
    }
}

#[test]
fn truncation_and_garbage_are_format_errors() {
    let (ckpt, _) = trained();
    let bytes = ckpt.encode();
    for cut in [0, 3, 8, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(MtpError::Format(_))));
    }
    assert!(Checkpoint::decode(b"not a checkpoint at all").is_err());
}

#[test]
fn mismatched_shapes_are_rejected() {
    let (mut ckpt, _) = trained();
    let t = &mut ckpt.tensors[0];
    t.dims.push(1);
    assert!(matches!(checkpoint::load_model(&ckpt), Err(MtpError::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_tables_round_trip(
        text in "[a-z._=0-9\n]{0,64}",
        tensors in proptest::collection::vec(
            ("[a-z.]{1,12}", proptest::collection::vec(any::<f64>(), 0..12)),
            0..4,
        ),
    ) {
        let ckpt = Checkpoint {
            config_text: text,
            tensors: tensors
                .into_iter()
                .map(|(name, values)| NamedTensor { name, dims: vec![values.len()], values })
                .collect(),
        };
        let back = Checkpoint::decode(&ckpt.encode()).unwrap();
        prop_assert_eq!(back.encode(), ckpt.encode());
    }
}
