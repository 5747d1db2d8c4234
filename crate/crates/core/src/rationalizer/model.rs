use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask::{sample_selection, SampleMode, SampledMask};
use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, BiGru, BiGruCache, Embedding, Linear, Parameters, Real};
use crate::Distribution;

/// Layer sizes shared by the extractor and the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.embedding_dim == 0 || self.hidden_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!("degenerate model dimensions {self:?}")));
        }
        Ok(())
    }
}

fn scale_rows<T: Real>(x: &Array2<T>, col: ArrayView2<'_, T>, t: usize) -> Array2<T> {
    x * &col.column(t).insert_axis(Axis(1))
}

/// Token selector: embedding, bidirectional GRU, per-token 2-way head
/// (index 1 = select).
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor<T> {
    pub embedding: Embedding<T>,
    pub encoder: BiGru<T>,
    pub head: Linear<T>,
}

pub struct ExtractorPass<T> {
    embedded: Vec<Array2<T>>,
    cache: BiGruCache<T>,
    encoded: Vec<Array2<T>>,
    /// Per position, `B × 2` logits.
    pub logits: Vec<Array2<T>>,
}

impl<T: Real> ExtractorPass<T> {
    /// `logit(select) - logit(skip)`, `B × L`.
    pub fn selection_gap(&self) -> Array2<T> {
        let b = self.logits.first().map_or(0, |l| l.nrows());
        let mut gap = Array2::zeros((b, self.logits.len()));
        for (t, l) in self.logits.iter().enumerate() {
            for i in 0..b {
                gap[[i, t]] = l[[i, 1]] - l[[i, 0]];
            }
        }
        gap
    }
}

impl<T: Real> Extractor<T> {
    pub fn new<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let encoder = BiGru::new(dims.embedding_dim, dims.hidden_dim, rng);
        Self {
            embedding: Embedding::new(dims.vocab_size, dims.embedding_dim, rng),
            head: Linear::new(encoder.output_dim(), 2, rng),
            encoder,
        }
    }

    pub fn forward(&self, batch: &Batch) -> ExtractorPass<T> {
        let pad = batch.pad_mask::<T>();
        let embedded: Vec<Array2<T>> = self
            .embedding
            .lookup(batch.ids.view())
            .iter()
            .enumerate()
            .map(|(t, e)| scale_rows(e, pad.view(), t))
            .collect();
        let (encoded, cache) = self.encoder.run(&embedded, pad.view());
        let logits = encoded.iter().map(|h| self.head.forward(h)).collect();
        ExtractorPass {
            embedded,
            cache,
            encoded,
            logits,
        }
    }

    /// Accumulates parameter gradients for per-position logit gradients.
    pub fn backward(&self, batch: &Batch, pass: &ExtractorPass<T>, dlogits: &[Array2<T>], grad: &mut Self) {
        let pad = batch.pad_mask::<T>();
        let dencoded: Vec<Array2<T>> = pass
            .encoded
            .iter()
            .zip(dlogits)
            .map(|(h, d)| self.head.backward(h, d, Some(&mut grad.head)))
            .collect();
        let dembedded = self
            .encoder
            .backprop(&pass.embedded, &pass.cache, &dencoded, Some(&mut grad.encoder), true);
        let demb: Vec<Array2<T>> = dembedded
            .iter()
            .enumerate()
            .map(|(t, d)| scale_rows(d, pad.view(), t))
            .collect();
        self.embedding.backward(batch.ids.view(), &demb, &mut grad.embedding);
    }

    /// Selection mask for `batch`; `noise` supplies Gumbel differences in
    /// train mode.
    pub fn select(
        &self,
        batch: &Batch,
        temperature: f64,
        mode: SampleMode,
        noise: Option<ArrayView2<'_, T>>,
    ) -> Result<(ExtractorPass<T>, SampledMask<T>)> {
        let pass = self.forward(batch);
        let pad = batch.pad_mask::<T>();
        let mask = sample_selection(pass.selection_gap().view(), pad.view(), temperature, mode, noise)?;
        Ok((pass, mask))
    }
}

impl<T: Real> Parameters<T> for Extractor<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        let mut v = self.embedding.tensors();
        v.extend(self.encoder.tensors());
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.embedding.tensors_mut();
        v.extend(self.encoder.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

/// Classifier shared by full, rationale and complement inputs: embedding,
/// bidirectional GRU, max-pool over non-PAD positions, linear, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor<T> {
    pub embedding: Embedding<T>,
    pub encoder: BiGru<T>,
    pub head: Linear<T>,
}

pub struct PredictorPass<T> {
    embedded: Vec<Array2<T>>,
    /// Per-token input multiplier (`pad`, `pad ⊙ M` or `pad ⊙ (1 - M)`).
    multiplier: Array2<T>,
    inputs: Vec<Array2<T>>,
    cache: BiGruCache<T>,
    pooled: Array2<T>,
    argmax: Array2<usize>,
    pub logits: Array2<T>,
    pub probs: Array2<T>,
}

impl<T: Real> Predictor<T> {
    pub fn new<R: Rng>(dims: &ModelDims, rng: &mut R) -> Self {
        let encoder = BiGru::new(dims.embedding_dim, dims.hidden_dim, rng);
        Self {
            embedding: Embedding::new(dims.vocab_size, dims.embedding_dim, rng),
            head: Linear::new(encoder.output_dim(), dims.num_classes, rng),
            encoder,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.bias.ncols()
    }

    /// Classifies `multiplier ⊙ X`. With `None` the full input is used;
    /// the multiplier is always restricted to non-PAD positions.
    pub fn forward(&self, batch: &Batch, multiplier: Option<ArrayView2<'_, T>>) -> Result<PredictorPass<T>> {
        let pad = batch.pad_mask::<T>();
        let multiplier = match multiplier {
            None => pad.clone(),
            Some(m) if m.dim() == pad.dim() => &m * &pad,
            Some(m) => return Err(Error::Shape(format!("mask {:?} vs batch {:?}", m.dim(), pad.dim()))),
        };
        let embedded = self.embedding.lookup(batch.ids.view());
        let inputs: Vec<Array2<T>> = embedded
            .iter()
            .enumerate()
            .map(|(t, e)| scale_rows(e, multiplier.view(), t))
            .collect();
        let (encoded, cache) = self.encoder.run(&inputs, pad.view());
        let b = batch.size();
        let width = self.encoder.output_dim();
        let mut pooled = Array2::from_elem((b, width), T::neg_infinity());
        let mut argmax = Array2::zeros((b, width));
        for (t, h) in encoded.iter().enumerate() {
            for i in 0..b {
                if t >= batch.lengths[i] {
                    continue;
                }
                for j in 0..width {
                    if h[[i, j]] > pooled[[i, j]] {
                        pooled[[i, j]] = h[[i, j]];
                        argmax[[i, j]] = t;
                    }
                }
            }
        }
        let logits = self.head.forward(&pooled);
        let probs = softmax_rows(&logits);
        Ok(PredictorPass {
            embedded,
            multiplier,
            inputs,
            cache,
            pooled,
            argmax,
            logits,
            probs,
        })
    }

    /// Backpropagates logit gradients. Accumulates into `grad` when given
    /// and returns the gradient with respect to the input multiplier when
    /// `want_multiplier` is set.
    pub fn backward(
        &self,
        batch: &Batch,
        pass: &PredictorPass<T>,
        dlogits: &Array2<T>,
        mut grad: Option<&mut Self>,
        want_multiplier: bool,
    ) -> Option<Array2<T>> {
        let dpooled = self.head.backward(&pass.pooled, dlogits, grad.as_deref_mut().map(|g| &mut g.head));
        let (b, l) = batch.ids.dim();
        let width = self.encoder.output_dim();
        let mut dencoded = vec![Array2::<T>::zeros((b, width)); l];
        for i in 0..b {
            for j in 0..width {
                dencoded[pass.argmax[[i, j]]][[i, j]] += dpooled[[i, j]];
            }
        }
        let need_inputs = grad.is_some() || want_multiplier;
        let dinputs = self.encoder.backprop(
            &pass.inputs,
            &pass.cache,
            &dencoded,
            grad.as_deref_mut().map(|g| &mut g.encoder),
            need_inputs,
        );
        if let Some(g) = grad {
            let demb: Vec<Array2<T>> = dinputs
                .iter()
                .enumerate()
                .map(|(t, d)| scale_rows(d, pass.multiplier.view(), t))
                .collect();
            self.embedding.backward(batch.ids.view(), &demb, &mut g.embedding);
        }
        want_multiplier.then(|| {
            let mut dm = Array2::zeros((b, l));
            for (t, (d, e)) in dinputs.iter().zip(&pass.embedded).enumerate() {
                let col = (d * e).sum_axis(Axis(1));
                dm.column_mut(t).assign(&col);
            }
            dm
        })
    }

    /// Per-example label distributions for `multiplier ⊙ X`.
    pub fn predict_distribution(&self, batch: &Batch, multiplier: Option<ArrayView2<'_, T>>) -> Result<Vec<Distribution>> {
        let pass = self.forward(batch, multiplier)?;
        pass.probs
            .rows()
            .into_iter()
            .map(|r| Distribution::from_weights(r.iter().map(|p| p.as_f64()).collect()))
            .collect()
    }
}

impl<T: Real> Parameters<T> for Predictor<T> {
    fn tensors(&self) -> Vec<&Array2<T>> {
        let mut v = self.embedding.tensors();
        v.extend(self.encoder.tensors());
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.embedding.tensors_mut();
        v.extend(self.encoder.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, EncodedCorpus, Example, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_batch() -> (Batch, usize) {
        let corpus: Corpus = vec![
            Example::new("a b c d e".split(' ').map(String::from).collect(), 1),
            Example::new("c a e".split(' ').map(String::from).collect(), 0),
        ]
        .into_iter()
        .collect();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let enc = EncodedCorpus::new(&corpus, &vocab, 256).unwrap();
        (enc.batch(&[0, 1]), vocab.len())
    }

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            vocab_size: vocab,
            embedding_dim: 3,
            hidden_dim: 4,
            num_classes: 2,
        }
    }

    #[test]
    fn predictor_gradients_match_finite_differences() {
        let (batch, v) = tiny_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = Predictor::<f64>::new(&dims(v), &mut rng);
        let mult = Array2::from_shape_fn((2, 5), |(i, t)| 0.3 + 0.1 * (i + t) as f64);
        let w = Array2::from_shape_vec((2, 2), vec![0.7, -1.1, 0.4, 0.9]).unwrap();
        let objective = |p: &Predictor<f64>, m: &Array2<f64>| (&p.forward(&batch, Some(m.view())).unwrap().probs * &w).sum();
        let pass = pred.forward(&batch, Some(mult.view())).unwrap();
        // d(sum w ⊙ softmax)/dlogits
        let probs = &pass.probs;
        let mut dlogits = Array2::zeros((2, 2));
        for i in 0..2 {
            let dot: f64 = (0..2).map(|k| w[[i, k]] * probs[[i, k]]).sum();
            for k in 0..2 {
                dlogits[[i, k]] = probs[[i, k]] * (w[[i, k]] - dot);
            }
        }
        let mut grad = pred.zeros_like();
        let dm = pred.backward(&batch, &pass, &dlogits, Some(&mut grad), true).unwrap();
        let eps = 1e-6;
        for (ti, g) in grad.tensors().iter().enumerate() {
            for idx in (0..g.len()).step_by(3) {
                let mut plus = pred.clone();
                let mut minus = pred.clone();
                plus.tensors_mut()[ti].as_slice_mut().unwrap()[idx] += eps;
                minus.tensors_mut()[ti].as_slice_mut().unwrap()[idx] -= eps;
                let fd = (objective(&plus, &mult) - objective(&minus, &mult)) / (2.0 * eps);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "tensor {ti}[{idx}]: {fd} vs {an}");
            }
        }
        for i in 0..2 {
            for t in 0..batch.lengths[i] {
                let mut plus = mult.clone();
                let mut minus = mult.clone();
                plus[[i, t]] += eps;
                minus[[i, t]] -= eps;
                let fd = (objective(&pred, &plus) - objective(&pred, &minus)) / (2.0 * eps);
                assert!((fd - dm[[i, t]]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn padding_does_not_change_predictions() {
        let (batch, v) = tiny_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = Predictor::<f64>::new(&dims(v), &mut rng);
        let together = pred.forward(&batch, None).unwrap().probs;
        let alone = pred.forward(&batch.rows(1..2), None).unwrap().probs;
        for k in 0..2 {
            assert!((together[[1, k]] - alone[[0, k]]).abs() < 1e-12);
        }
        let ext = Extractor::<f64>::new(&dims(v), &mut rng);
        let g_all = ext.forward(&batch).selection_gap();
        let g_one = ext.forward(&batch.rows(1..2)).selection_gap();
        for t in 0..3 {
            assert!((g_all[[1, t]] - g_one[[0, t]]).abs() < 1e-12);
        }
    }

    #[test]
    fn distributions_are_normalized() {
        let (batch, v) = tiny_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Predictor::<f32>::new(&dims(v), &mut rng);
        let d = pred.predict_distribution(&batch, None).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|d| (d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }
}
