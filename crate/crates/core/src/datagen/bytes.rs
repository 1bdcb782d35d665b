use crate::error::{MtpError, Result};
use crate::model::TokenBatch;
use crate::rng;
use crate::training::BatchSource;
use rand::Rng;

pub const BYTE_BOS: usize = 256;
pub const BYTE_EOS: usize = 257;
pub const BYTE_VOCAB: usize = 258;

pub fn byte_tokenize(text: &[u8]) -> Vec<usize> {
    text.iter().map(|&b| b as usize).collect()
}

/// Inverse of [`byte_tokenize`]; the two special ids decode to nothing.
pub fn byte_detokenize(ids: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        match id {
            0..=255 => out.push(id as u8),
            BYTE_BOS | BYTE_EOS => {}
            _ => {
                return Err(MtpError::Index(format!(
                    "byte id {id} >= vocabulary size {BYTE_VOCAB}"
                )))
            }
        }
    }
    Ok(out)
}

/// Windows of a byte corpus at offsets drawn from `(seed, step, row)`.
#[derive(Clone, Debug)]
pub struct ByteCorpus {
    pub ids: Vec<usize>,
    pub seed: u64,
}

impl ByteCorpus {
    pub fn new(text: &[u8], seed: u64) -> Self {
        let mut ids = vec![BYTE_BOS];
        ids.extend(byte_tokenize(text));
        ids.push(BYTE_EOS);
        Self { ids, seed }
    }
}

impl BatchSource for ByteCorpus {
    fn batch(&self, step: u64, rows: usize, seq_len: usize) -> Result<TokenBatch> {
        if self.ids.len() < seq_len {
            return Err(MtpError::Data(format!(
                "corpus of {} tokens is shorter than one row of {seq_len}",
                self.ids.len()
            )));
        }
        let mut r = rng::stream(self.seed, &[rng::purpose("bytes"), step]);
        TokenBatch::new(
            (0..rows)
                .map(|_| {
                    let start = r.random_range(0..=self.ids.len() - seq_len);
                    self.ids[start..start + seq_len].to_vec()
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        assert_eq!(byte_tokenize(b"ab"), vec![97, 98]);
        assert_eq!(byte_detokenize(&[97, 98]).unwrap(), b"ab");
        assert!(byte_tokenize(b"").is_empty());
        assert!(matches!(byte_detokenize(&[300]), Err(MtpError::Index(_))));
    }
}
