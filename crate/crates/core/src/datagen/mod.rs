//! Synthetic tasks: polynomial arithmetic over `F₇[X]/(X⁵)`, two-token-name
//! induction stories, and byte-level text, plus the on-disk dataset format.

mod bytes;
mod files;
mod induction;
mod poly;
mod ring;

pub use bytes::{byte_detokenize, byte_tokenize, ByteCorpus, BYTE_BOS, BYTE_EOS, BYTE_VOCAB};
pub use files::{
    config_hash, read_records, read_vocab, records_to_string, write_records, write_vocab, Manifest,
};
pub use induction::{
    bigram_copy_prediction, InductionConfig, InductionEvalSpec, InductionTrain, NamePosition,
};
pub use poly::{gen_expr, parse, render, serialize, BinOp, PolyConfig, PolyExpr, PolySample};
pub use ring::{ring_add, ring_compose, ring_mul, ring_neg, RingElem, DEGREE, P};

/// Token ids of the arithmetic vocabulary.
pub mod poly_vocab {
    pub use super::poly::{
        BOS, COMPOSE, EOS, EQUALS, GLYPHS, LPAREN, MINUS, PAUSE, PLUS, RPAREN, TIMES, VOCAB_SIZE,
    };
}
