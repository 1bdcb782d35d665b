use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{MtpError, Result};

/// One record per line, token ids separated by single spaces.
pub fn records_to_string(records: &[Vec<usize>]) -> String {
    let mut out = String::new();
    for r in records {
        let line: Vec<String> = r.iter().map(usize::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[Vec<usize>]) -> Result<()> {
    fs::write(path, records_to_string(records)).map_err(|e| MtpError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| MtpError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        MtpError::Data(format!("{}:{}: bad token id '{t}'", path.display(), n + 1))
                    })
                })
                .collect()
        })
        .collect()
}

/// `id<TAB>glyph` per line.
pub fn write_vocab(path: &Path, glyphs: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, g) in glyphs.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{g}");
    }
    fs::write(path, out).map_err(|e| MtpError::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| MtpError::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            let (id, glyph) = l
                .split_once('\t')
                .ok_or_else(|| MtpError::Data(format!("vocab line {} has no tab", n + 1)))?;
            if id.parse::<usize>().ok() != Some(n) {
                return Err(MtpError::Data(format!("vocab line {} has id '{id}'", n + 1)));
            }
            Ok(glyph.to_string())
        })
        .collect()
}

/// Hex SHA-256 of a canonical config text.
pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Dataset manifest: seed, config hash, and one count per file.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub task: String,
    pub seed: u64,
    pub config_hash: String,
    pub counts: Vec<(String, usize)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "task={}\nseed={}\nconfig_hash={}\n",
            self.task, self.seed, self.config_hash
        );
        for (name, n) in &self.counts {
            let _ = writeln!(out, "count.{name}={n}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| MtpError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.txt");
        let recs = vec![vec![1, 2, 3], vec![16]];
        write_records(&p, &recs).unwrap();
        assert_eq!(read_records(&p).unwrap(), recs);
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
