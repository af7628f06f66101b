//! Synthetic annotated corpora with a learnable edge signal.
//!
//! Each document's gold graph is a chain `i → i+1` plus random forward skip
//! edges. Every gold edge plants one shared rare token in both endpoint
//! sentences; the remaining words come from a small common vocabulary.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SentenceRecord, SentenceType};
use crate::error::{Error, Result};
use crate::graph::Edge;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub docs: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Probability of each non-adjacent forward pair becoming a skip edge.
    /// The default puts the mean node degree near 1.88 for sizes 6–14.
    pub skip_probability: f64,
    pub rare_vocab: usize,
    pub common_vocab: usize,
    /// Common words per sentence, drawn uniformly from this inclusive range.
    pub common_words: (usize, usize),
    /// Rare tokens planted per gold edge.
    pub tokens_per_edge: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 500,
            min_size: 6,
            max_size: 14,
            skip_probability: 0.0102,
            rare_vocab: 10_000,
            common_vocab: 200,
            common_words: (3, 6),
            tokens_per_edge: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size < 2 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "invalid size range {}..={}; the minimum must be at least 2",
                self.min_size, self.max_size
            )));
        }
        if !(0.0..=1.0).contains(&self.skip_probability) {
            return Err(Error::Config(format!("skip probability {} outside [0, 1]", self.skip_probability)));
        }
        if self.rare_vocab == 0 || self.common_vocab == 0 || self.common_words.0 > self.common_words.1 {
            return Err(Error::Config("vocabularies must be non-empty and word ranges ordered".into()));
        }
        Ok(())
    }
}

const STYPES: [SentenceType; 3] = [SentenceType::Action, SentenceType::Information, SentenceType::Both];

fn document<R: Rng>(id: String, config: &SynthConfig, rng: &mut R) -> Result<Document> {
    let n = rng.random_range(config.min_size..=config.max_size);
    let mut edges: BTreeSet<Edge> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random_bool(config.skip_probability) {
                edges.insert((i, j));
            }
        }
    }
    let mut words: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let count = rng.random_range(config.common_words.0..=config.common_words.1);
            (0..count)
                .map(|_| format!("w{}", rng.random_range(0..config.common_vocab)))
                .collect()
        })
        .collect();
    for &(i, j) in &edges {
        for _ in 0..config.tokens_per_edge {
            let token = format!("r{}", rng.random_range(0..config.rare_vocab));
            words[i].push(token.clone());
            words[j].push(token);
        }
    }
    let sentences = words
        .into_iter()
        .enumerate()
        .map(|(k, mut w)| {
            w.shuffle(rng);
            let stype = *STYPES.choose(rng).expect("non-empty");
            SentenceRecord::new(k, format!("{}.", w.join(" ")), stype)
        })
        .collect();
    Document::new(id, sentences, edges)
}

/// Deterministic for a fixed config.
pub fn generate(config: &SynthConfig) -> Result<Vec<Document>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.docs.max(1).to_string().len();
    (0..config.docs)
        .map(|k| document(format!("synth-{k:0width$}"), config, &mut rng))
        .collect()
}
