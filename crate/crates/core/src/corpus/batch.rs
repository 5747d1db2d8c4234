use std::ops::Range;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::nn::Real;

/// A corpus mapped to token ids, truncated to a maximum length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCorpus {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub gold: Vec<Option<Vec<bool>>>,
    /// Per-token flags marking spurious-role tokens, when known.
    pub spurious: Option<Vec<Vec<bool>>>,
}

impl EncodedCorpus {
    pub fn new(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(corpus.len());
        let mut labels = Vec::with_capacity(corpus.len());
        let mut gold = Vec::with_capacity(corpus.len());
        for (i, ex) in corpus.iter().enumerate() {
            if ex.is_empty() {
                return Err(Error::Shape(format!("example {i} has no tokens")));
            }
            let n = ex.len().min(max_len);
            ids.push(vocab.encode(&ex.tokens[..n]));
            labels.push(ex.label);
            gold.push(ex.gold_mask.as_ref().map(|m| m[..n.min(m.len())].to_vec()));
        }
        Ok(Self {
            ids,
            labels,
            gold,
            spurious: None,
        })
    }

    /// Attaches spurious-token flags computed by `is_spurious` on each raw token.
    pub fn with_spurious_flags(mut self, corpus: &Corpus, is_spurious: impl Fn(&str) -> bool) -> Self {
        self.spurious = Some(
            corpus
                .iter()
                .zip(&self.ids)
                .map(|(ex, ids)| ex.tokens[..ids.len()].iter().map(|t| is_spurious(t)).collect())
                .collect(),
        );
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let seq_len = indices.iter().map(|&i| self.ids[i].len()).max().unwrap_or(0);
        let mut ids = Array2::from_elem((indices.len(), seq_len), PAD_ID);
        let mut spurious = self.spurious.as_ref().map(|_| Array2::from_elem((indices.len(), seq_len), false));
        for (row, &i) in indices.iter().enumerate() {
            for (t, &id) in self.ids[i].iter().enumerate() {
                ids[[row, t]] = id;
            }
            if let (Some(dst), Some(src)) = (spurious.as_mut(), self.spurious.as_ref()) {
                for (t, &f) in src[i].iter().enumerate() {
                    dst[[row, t]] = f;
                }
            }
        }
        Batch {
            ids,
            lengths: indices.iter().map(|&i| self.ids[i].len()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
            spurious,
        }
    }

    /// Batches in a deterministic order: shuffled by `(seed, epoch)` when
    /// `epoch` is given, corpus order otherwise.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: Option<u64>) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(epoch) = epoch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
        }
        order.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect()
    }
}

/// Token-id matrix (batch × length) padded with PAD, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Array2<usize>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    /// Row → example index in the source corpus.
    pub indices: Vec<usize>,
    pub spurious: Option<Array2<bool>>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn seq_len(&self) -> usize {
        self.ids.ncols()
    }

    /// 1 at token positions, 0 at PAD.
    pub fn pad_mask<T: Real>(&self) -> Array2<T> {
        self.ids.mapv(|id| if id == PAD_ID { T::zero() } else { T::one() })
    }

    pub fn rows(&self, range: Range<usize>) -> Batch {
        let seq_len = range.clone().map(|i| self.lengths[i]).max().unwrap_or(0);
        Batch {
            ids: self.ids.slice(s![range.clone(), ..seq_len]).to_owned(),
            lengths: self.lengths[range.clone()].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            indices: self.indices[range.clone()].to_vec(),
            spurious: self.spurious.as_ref().map(|s| s.slice(s![range, ..seq_len]).to_owned()),
        }
    }

    /// Splits into consecutive sub-batches of at most `chunk` rows.
    pub fn chunks(&self, chunk: usize) -> Vec<Batch> {
        let chunk = chunk.max(1);
        (0..self.size())
            .step_by(chunk)
            .map(|start| self.rows(start..(start + chunk).min(self.size())))
            .collect()
    }
}
