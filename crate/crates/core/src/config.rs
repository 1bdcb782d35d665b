//! Run configuration as canonical `key=value` text (keys sorted), with
//! typed views for each subsystem.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{poly_vocab, InductionConfig, PolyConfig, BYTE_VOCAB};
use crate::error::{MtpError, Result};
use crate::model::{HeadArch, ModelConfig};
use crate::training::{Schedule, TrainConfig};

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("bytes.path", ""),
    ("decode.k", "1,2"),
    ("decode.max_new_tokens", "16"),
    ("decode.prompts", "100"),
    ("induction.eval_stories", "200"),
    ("induction.n_eval_names", "100"),
    ("induction.n_first", "24"),
    ("induction.n_second", "24"),
    ("induction.n_train_names", "400"),
    ("induction.quality_mix", "0.3"),
    ("model.context_len", "96"),
    ("model.d_model", "128"),
    ("model.head_arch", "parallel"),
    ("model.n_attn_heads", "4"),
    ("model.n_future", "2"),
    ("model.n_total_layers", "5"),
    ("poly.eval_m_max", "9"),
    ("poly.pause_count", "0"),
    ("poly.test_per_m", "200"),
    ("poly.test_seed", "1000003"),
    ("poly.train_m_max", "5"),
    ("poly.train_m_min", "1"),
    ("run.checkpoint_every", "0"),
    ("run.log_every", "10"),
    ("run.out_dir", "out"),
    ("seed", "0"),
    ("task", "poly"),
    ("train.adam_beta1", "0.9"),
    ("train.adam_beta2", "0.95"),
    ("train.adam_eps", "1e-8"),
    ("train.batch_tokens", "1024"),
    ("train.clip_norm", "1.0"),
    ("train.decay_ratio", "0.1"),
    ("train.peak_lr", "3e-3"),
    ("train.schedule", "sequential_heads"),
    ("train.seq_len", "96"),
    ("train.steps", "600"),
    ("train.warmup_steps", "30"),
    ("train.weight_decay", "0.1"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Poly,
    Induction,
    Bytes,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Poly => "poly",
            Task::Induction => "induction",
            Task::Bytes => "bytes",
        })
    }
}

impl FromStr for Task {
    type Err = MtpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poly" => Ok(Task::Poly),
            "induction" => Ok(Task::Induction),
            "bytes" => Ok(Task::Bytes),
            other => Err(MtpError::Config(format!(
                "unknown task '{other}' (expected poly, induction or bytes)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeSettings {
    pub k: Vec<usize>,
    pub max_new_tokens: usize,
    pub prompts: usize,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub task: Task,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_seq_len: usize,
    pub poly: PolyConfig,
    pub induction: InductionConfig,
    pub bytes_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub decode: DecodeSettings,
}

/// Message of a nested config error without its category prefix.
fn bare(e: MtpError) -> String {
    match e {
        MtpError::Config(m) => m,
        other => other.to_string(),
    }
}

fn get<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &values[key];
    raw.parse()
        .map_err(|_| MtpError::Config(format!("{key}: cannot parse '{raw}'")))
}

pub fn parse_k_list(raw: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| MtpError::Config(format!("bad k list '{raw}'")))
        })
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(MtpError::Config(format!("k list '{raw}' must hold positive values")));
    }
    Ok(ks)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(std::iter::empty::<(String, String)>()).expect("defaults are valid")
    }
}

impl RunConfig {
    /// Defaults overridden by `pairs`; unknown keys are rejected.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in pairs {
            let k = k.into();
            if !values.contains_key(&k) {
                return Err(MtpError::Config(format!("unknown config key '{k}'")));
            }
            values.insert(k, v.into());
        }
        Self::resolve(values)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
        let mut seen = BTreeMap::new();
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MtpError::Config(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), ()).is_some() {
                return Err(MtpError::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            pairs.push((k, v));
        }
        Ok(pairs)
    }

    pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MtpError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let mut pairs: Vec<(String, String)> = self.values.clone().into_iter().collect();
        if !self.values.contains_key(key) {
            return Err(MtpError::Config(format!("unknown config key '{key}'")));
        }
        pairs.push((key.to_string(), value.into()));
        *self = Self::from_pairs(pairs)?;
        Ok(())
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn resolve(values: BTreeMap<String, String>) -> Result<Self> {
        let task: Task = get(&values, "task")?;
        let seed: u64 = get(&values, "seed")?;
        let context_len: usize = get(&values, "model.context_len")?;

        let poly = PolyConfig {
            train_m: (get(&values, "poly.train_m_min")?, get(&values, "poly.train_m_max")?),
            eval_m_max: get(&values, "poly.eval_m_max")?,
            test_per_m: get(&values, "poly.test_per_m")?,
            train_seed: seed,
            test_seed: get(&values, "poly.test_seed")?,
            pause_count: get(&values, "poly.pause_count")?,
            context_len,
        };
        let induction = InductionConfig {
            n_first: get(&values, "induction.n_first")?,
            n_second: get(&values, "induction.n_second")?,
            n_train_names: get(&values, "induction.n_train_names")?,
            n_eval_names: get(&values, "induction.n_eval_names")?,
            eval_stories: get(&values, "induction.eval_stories")?,
            quality_mix: get(&values, "induction.quality_mix")?,
            seed,
            context_len,
        };
        let vocab_size = match task {
            Task::Poly => poly_vocab::VOCAB_SIZE,
            Task::Induction => induction.vocab_size(),
            Task::Bytes => BYTE_VOCAB,
        };
        let model = ModelConfig {
            d_model: get(&values, "model.d_model")?,
            n_total_layers: get(&values, "model.n_total_layers")?,
            n_attn_heads: get(&values, "model.n_attn_heads")?,
            n_future: get(&values, "model.n_future")?,
            head_arch: values["model.head_arch"].parse::<HeadArch>()?,
            vocab_size,
            context_len,
            seed,
        };
        let train = TrainConfig {
            batch_tokens: get(&values, "train.batch_tokens")?,
            steps: get(&values, "train.steps")?,
            warmup_steps: get(&values, "train.warmup_steps")?,
            peak_lr: get(&values, "train.peak_lr")?,
            decay_ratio: get(&values, "train.decay_ratio")?,
            adam_beta1: get(&values, "train.adam_beta1")?,
            adam_beta2: get(&values, "train.adam_beta2")?,
            adam_eps: get(&values, "train.adam_eps")?,
            weight_decay: get(&values, "train.weight_decay")?,
            clip_norm: get(&values, "train.clip_norm")?,
            seed,
            schedule: values["train.schedule"].parse::<Schedule>()?,
        };
        let train_seq_len: usize = get(&values, "train.seq_len")?;
        let bytes_path = Some(values["bytes.path"].clone())
            .filter(|p| !p.is_empty())
            .map(PathBuf::from);
        let decode = DecodeSettings {
            k: parse_k_list(&values["decode.k"])?,
            max_new_tokens: get(&values, "decode.max_new_tokens")?,
            prompts: get(&values, "decode.prompts")?,
        };

        let mut problems = Vec::new();
        for r in [model.validate(), train.validate()] {
            if let Err(e) = r {
                problems.push(bare(e));
            }
        }
        let task_check = match task {
            Task::Poly => poly.validate(),
            Task::Induction => induction.validate(),
            Task::Bytes => Ok(()),
        };
        if let Err(e) = task_check {
            problems.push(bare(e));
        }
        if train_seq_len > context_len || train_seq_len < model.n_future + 1 {
            problems.push(format!(
                "train.seq_len {train_seq_len} must lie in [n_future + 1, context_len = {context_len}]"
            ));
        }
        if let Some(&bad) = decode.k.iter().find(|&&k| k > model.n_future) {
            problems.push(format!("decode.k {bad} exceeds model.n_future {}", model.n_future));
        }
        if !problems.is_empty() {
            return Err(MtpError::Config(problems.join("; ")));
        }

        Ok(Self {
            task,
            seed,
            model,
            train,
            train_seq_len,
            poly,
            induction,
            bytes_path,
            out_dir: PathBuf::from(&values["run.out_dir"]),
            log_every: get(&values, "run.log_every")?,
            checkpoint_every: get(&values, "run.checkpoint_every")?,
            decode,
            values,
        })
    }

    /// Sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Canonical text without `run.*` keys, which do not affect results.
    pub fn canonical_semantic(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !k.starts_with("run."))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Result-affecting keys whose values differ, as `key: ours != theirs`.
    pub fn diff(&self, other: &RunConfig) -> Vec<String> {
        self.values
            .iter()
            .filter(|(k, _)| !k.starts_with("run.") && !k.starts_with("decode."))
            .filter(|(k, v)| other.values.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {v} != {}", other.values.get(k).map_or("-", String::as_str)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let c = RunConfig::from_pairs([("model.n_future", "4"), ("model.n_total_layers", "6")]).unwrap();
        let again = RunConfig::from_pairs(RunConfig::parse_text(&c.canonical()).unwrap()).unwrap();
        assert_eq!(c, again);
        let text = c.canonical();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [
            ("nope", "1"),
            ("model.n_future", "5"),
            ("poly.train_m_min", "0"),
            ("model.head_arch", "tree"),
            ("decode.k", "3"),
            ("train.steps", "x"),
        ] {
            let e = RunConfig::from_pairs([(k, v)]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{k}={v}: {e}");
        }
    }

    #[test]
    fn seed_must_differ_from_test_seed() {
        assert!(RunConfig::from_pairs([("seed", "1000003")]).is_err());
    }
}
