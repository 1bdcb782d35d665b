//! Templated short stories whose characters carry random two-token names.
//! Predicting the second token of a name is only possible by copying it
//! from an earlier mention in the same story.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{MtpError, Result};
use crate::model::TokenBatch;
use crate::rng;
use crate::training::BatchSource;

pub const BOS: usize = 0;
pub const EOS: usize = 1;

const WORDS: [&str; 44] = [
    ".", "once", "there", "was", "a", "girl", "boy", "called", "lived", "in", "the", "village",
    "went", "to", "park", "saw", "dog", "cat", "and", "played", "with", "ball", "said", "hello",
    "liked", "sun", "warm", "sky", "blue", "trees", "were", "tall", "wind", "soft", "they",
    "ate", "cake", "home", "happy", "friend", "found", "red", "box", "later",
];

fn word(w: &str) -> usize {
    2 + WORDS.iter().position(|&x| x == w).expect("template word in vocabulary")
}

/// Sentence templates: `A` and `B` are name slots.
const INTRO: [&str; 3] = [
    "once there was a girl called A .",
    "there lived a boy called A .",
    "in the village lived A .",
];
const ONE_NAME: [&str; 6] = [
    "A went to the park .",
    "A saw a dog .",
    "A liked the red box .",
    "A found a ball .",
    "A ate cake .",
    "A went home happy .",
];
const TWO_NAMES: [&str; 4] = [
    "A and B played with a ball .",
    "A said hello to B .",
    "A saw B in the park .",
    "B was a friend to A .",
];
const FILLER: [&str; 5] = [
    "the sun was warm .",
    "the sky was blue .",
    "the trees were tall .",
    "the wind was soft .",
    "they were happy .",
];

#[derive(Clone, Debug, PartialEq)]
pub struct InductionConfig {
    /// Size of the pool of first name tokens.
    pub n_first: usize,
    /// Size of the (disjoint) pool of second name tokens.
    pub n_second: usize,
    pub n_train_names: usize,
    pub n_eval_names: usize,
    pub eval_stories: usize,
    /// Fraction of stories drawn from the long template pool, where repeat
    /// mentions are separated by several filler sentences.
    pub quality_mix: f64,
    pub seed: u64,
    pub context_len: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        Self {
            n_first: 24,
            n_second: 24,
            n_train_names: 400,
            n_eval_names: 100,
            eval_stories: 200,
            quality_mix: 0.3,
            seed: 0,
            context_len: 96,
        }
    }
}

/// Second-name-token position within one eval story.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NamePosition {
    pub sequence: usize,
    pub position: usize,
    pub prior_mention: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InductionEvalSpec {
    pub corpus: Vec<Vec<usize>>,
    pub name_positions: Vec<NamePosition>,
}

impl InductionEvalSpec {
    /// Positions scored by the metric: second name tokens already seen.
    pub fn scored(&self) -> impl Iterator<Item = &NamePosition> {
        self.name_positions.iter().filter(|p| p.prior_mention)
    }
}

impl InductionConfig {
    pub const EOS_ID: usize = EOS;

    pub fn vocab_size(&self) -> usize {
        2 + WORDS.len() + self.n_first + self.n_second
    }

    fn first_id(&self, i: usize) -> usize {
        2 + WORDS.len() + i
    }

    fn second_id(&self, j: usize) -> usize {
        2 + WORDS.len() + self.n_first + j
    }

    pub fn is_second_name_token(&self, id: usize) -> bool {
        id >= self.second_id(0) && id < self.vocab_size()
    }

    pub fn glyph(&self, id: usize) -> String {
        match id {
            BOS => "<bos>".into(),
            EOS => "<eos>".into(),
            _ if id < 2 + WORDS.len() => WORDS[id - 2].into(),
            _ if id < self.second_id(0) => format!("F{}", id - self.first_id(0)),
            _ if id < self.vocab_size() => format!("s{}", id - self.second_id(0)),
            _ => "<?>".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let available = self.n_first * self.n_second;
        let wanted = self.n_train_names + self.n_eval_names;
        if self.n_first < 2 || self.n_second < 1 || available < wanted {
            return Err(MtpError::Config(format!(
                "{} x {} name tokens give {available} distinct names, {wanted} requested",
                self.n_first, self.n_second
            )));
        }
        if !(0.0..=1.0).contains(&self.quality_mix) {
            return Err(MtpError::Config(format!(
                "quality_mix {} must lie in [0, 1]",
                self.quality_mix
            )));
        }
        if self.context_len < 48 {
            return Err(MtpError::Config(format!(
                "context_len {} is too short for a story (need >= 48)",
                self.context_len
            )));
        }
        Ok(())
    }

    /// Disjoint (train, eval) name lists, each name a (first, second) token pair.
    pub fn name_split(&self) -> Result<(Vec<[usize; 2]>, Vec<[usize; 2]>)> {
        self.validate()?;
        let mut all: Vec<[usize; 2]> = (0..self.n_first)
            .flat_map(|i| (0..self.n_second).map(move |j| (i, j)))
            .map(|(i, j)| [self.first_id(i), self.second_id(j)])
            .collect();
        all.shuffle(&mut rng::stream(self.seed, &[rng::purpose("names")]));
        let eval = all[..self.n_eval_names].to_vec();
        let train = all[self.n_eval_names..self.n_eval_names + self.n_train_names].to_vec();
        Ok((train, eval))
    }

    /// One story from `names`, plus the positions of every second name token
    /// and whether the same name appeared earlier in the story.
    fn story(&self, names: &[[usize; 2]], r: &mut impl Rng) -> (Vec<usize>, Vec<(usize, bool)>) {
        let cast: Vec<[usize; 2]> = loop {
            let k = r.random_range(1..=2);
            let picked: Vec<[usize; 2]> = (0..k).map(|_| names[r.random_range(0..names.len())]).collect();
            // Distinct first tokens keep the copy target unambiguous.
            if k == 1 || picked[0][0] != picked[1][0] {
                break picked;
            }
        };
        let long = r.random::<f64>() < self.quality_mix;
        let mut sentences: Vec<(&str, usize, usize)> = Vec::new();
        for (i, _) in cast.iter().enumerate() {
            sentences.push((INTRO[r.random_range(0..INTRO.len())], i, i));
        }
        let body = if long { r.random_range(3..=5) } else { r.random_range(2..=4) };
        for _ in 0..body {
            if long {
                for _ in 0..r.random_range(1..=3) {
                    sentences.push((FILLER[r.random_range(0..FILLER.len())], 0, 0));
                }
            } else if r.random::<f64>() < 0.25 {
                sentences.push((FILLER[r.random_range(0..FILLER.len())], 0, 0));
            }
            if cast.len() == 2 && r.random::<bool>() {
                let (a, b) = if r.random::<bool>() { (0, 1) } else { (1, 0) };
                sentences.push((TWO_NAMES[r.random_range(0..TWO_NAMES.len())], a, b));
            } else {
                let a = r.random_range(0..cast.len());
                sentences.push((ONE_NAME[r.random_range(0..ONE_NAME.len())], a, a));
            }
        }

        let mut tokens = vec![BOS];
        let mut seconds = Vec::new();
        let mut seen = vec![false; cast.len()];
        for (template, a, b) in sentences {
            let mut sentence = Vec::new();
            let mut marks = Vec::new();
            for w in template.split(' ') {
                let slot = match w {
                    "A" => Some(a),
                    "B" => Some(b),
                    _ => None,
                };
                match slot {
                    Some(s) => {
                        sentence.push(cast[s][0]);
                        marks.push((sentence.len(), s));
                        sentence.push(cast[s][1]);
                    }
                    None => sentence.push(word(w)),
                }
            }
            if tokens.len() + sentence.len() + 1 > self.context_len {
                break;
            }
            let base = tokens.len();
            for (offset, s) in marks {
                seconds.push((base + offset, seen[s]));
                seen[s] = true;
            }
            tokens.extend(sentence);
        }
        tokens.push(EOS);
        (tokens, seconds)
    }

    pub fn eval_spec(&self) -> Result<InductionEvalSpec> {
        let (_, eval_names) = self.name_split()?;
        let mut r = rng::stream(self.seed, &[rng::purpose("induction-eval")]);
        let mut corpus = Vec::with_capacity(self.eval_stories);
        let mut name_positions = Vec::new();
        for sequence in 0..self.eval_stories {
            let (tokens, seconds) = self.story(&eval_names, &mut r);
            name_positions.extend(seconds.into_iter().map(|(position, prior_mention)| {
                NamePosition {
                    sequence,
                    position,
                    prior_mention,
                }
            }));
            corpus.push(tokens);
        }
        Ok(InductionEvalSpec {
            corpus,
            name_positions,
        })
    }

    /// Training row: stories over the training names, packed and cut to `seq_len`.
    pub fn train_row(&self, names: &[[usize; 2]], step: u64, row: usize, seq_len: usize) -> Vec<usize> {
        let mut r = rng::stream(self.seed, &[rng::purpose("induction-train"), step, row as u64]);
        let mut out = Vec::with_capacity(seq_len + self.context_len);
        while out.len() < seq_len {
            out.extend(self.story(names, &mut r).0);
        }
        out.truncate(seq_len);
        out
    }

    pub fn train_source(&self) -> Result<InductionTrain> {
        let (train, _) = self.name_split()?;
        Ok(InductionTrain {
            config: self.clone(),
            names: train,
        })
    }
}

/// Training stream over the training names.
#[derive(Clone, Debug)]
pub struct InductionTrain {
    pub config: InductionConfig,
    pub names: Vec<[usize; 2]>,
}

impl BatchSource for InductionTrain {
    fn batch(&self, step: u64, rows: usize, seq_len: usize) -> Result<TokenBatch> {
        TokenBatch::new(
            (0..rows)
                .map(|r| self.config.train_row(&self.names, step, r, seq_len))
                .collect(),
        )
    }
}

/// Predicts the token that followed the most recent earlier occurrence of
/// the current token — the idealised induction mechanism.
pub fn bigram_copy_prediction(prefix: &[usize]) -> Option<usize> {
    let (&current, before) = prefix.split_last()?;
    before
        .iter()
        .rposition(|&t| t == current)
        .map(|i| prefix[i + 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_many_names_is_config_error() {
        let c = InductionConfig {
            n_first: 3,
            n_second: 3,
            n_train_names: 8,
            n_eval_names: 2,
            ..InductionConfig::default()
        };
        assert!(matches!(c.validate(), Err(MtpError::Config(_))));
    }

    #[test]
    fn marked_positions_follow_an_earlier_mention() {
        let c = InductionConfig::default();
        let spec = c.eval_spec().unwrap();
        assert!(spec.scored().count() > c.eval_stories);
        for p in spec.scored() {
            let s = &spec.corpus[p.sequence];
            let name = [s[p.position - 1], s[p.position]];
            assert!(s[..p.position - 1].windows(2).any(|w| w == name));
        }
    }

    #[test]
    fn glyphs_are_distinct() {
        let c = InductionConfig::default();
        let g: std::collections::HashSet<String> = (0..c.vocab_size()).map(|i| c.glyph(i)).collect();
        assert_eq!(g.len(), c.vocab_size());
    }
}
