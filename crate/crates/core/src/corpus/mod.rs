//! Annotated rationale corpora: records, file formats, vocabulary and
//! batching.

mod batch;
mod io;
mod vocab;

use serde::{Deserialize, Serialize};

pub use batch::{Batch, EncodedCorpus};
pub use io::{
    load_annotated_dataset, mask_to_spans, parse_annotated, write_jsonl, DatasetFormat, JsonlRecord,
    DEFAULT_MAX_LEN,
};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One token sequence, its class, and (optionally) its gold rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: usize,
    pub gold_mask: Option<Vec<bool>>,
}

impl Example {
    pub fn new(tokens: Vec<String>, label: usize) -> Self {
        Self {
            tokens,
            label,
            gold_mask: None,
        }
    }

    pub fn with_gold(mut self, mask: Vec<bool>) -> Self {
        self.gold_mask = Some(mask);
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn new(examples: Vec<Example>) -> Self {
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }
}

impl FromIterator<Example> for Corpus {
    fn from_iter<I: IntoIterator<Item = Example>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Train / dev / test partitions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

/// Exact counts over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    /// Number of examples per class index.
    pub class_counts: Vec<usize>,
    pub annotated: usize,
    pub tokens: usize,
    pub mean_length: f64,
    /// Mean per-example fraction of gold-selected tokens, in percent.
    pub annotation_sparsity: f64,
}

pub fn corpus_statistics(corpus: &Corpus) -> CorpusStats {
    let mut class_counts = vec![0; corpus.num_classes()];
    let mut tokens = 0;
    let mut annotated = 0;
    let mut sparsity_sum = 0.0;
    for ex in corpus.iter() {
        class_counts[ex.label] += 1;
        tokens += ex.len();
        if let Some(mask) = &ex.gold_mask {
            annotated += 1;
            if !mask.is_empty() {
                sparsity_sum += mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
            }
        }
    }
    CorpusStats {
        examples: corpus.len(),
        class_counts,
        annotated,
        tokens,
        mean_length: if corpus.is_empty() { 0.0 } else { tokens as f64 / corpus.len() as f64 },
        annotation_sparsity: if annotated == 0 { 0.0 } else { 100.0 * sparsity_sum / annotated as f64 },
    }
}

/// Subsamples the majority class of a binary corpus down to the minority
/// count. Kept examples retain their original order.
pub fn balance_training_split(corpus: &Corpus, seed: u64) -> Result<Corpus> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(bad) = corpus.iter().find(|e| e.label > 1) {
        return Err(Error::Config(format!("balancing needs binary labels, found {}", bad.label)));
    }
    let by_class: [Vec<usize>; 2] = [0, 1].map(|c| {
        corpus
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == c)
            .map(|(i, _)| i)
            .collect()
    });
    for (c, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::EmptyClass(c));
        }
    }
    let target = by_class[0].len().min(by_class[1].len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; corpus.len()];
    for idx in &by_class {
        let mut chosen = idx.clone();
        if chosen.len() > target {
            chosen.shuffle(&mut rng);
            chosen.truncate(target);
        }
        chosen.into_iter().for_each(|i| keep[i] = true);
    }
    Ok(corpus
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect())
}
