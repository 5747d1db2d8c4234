//! Versioned JSON checkpoints with bit-exact tensors.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Extractor, ModelDims, Predictor};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{EncodedTensor, Parameters, Precision, Real};

pub const CHECKPOINT_FORMAT: &str = "rationale-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the canonical (sorted-key) JSON form of `value`.
pub fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    pub fingerprint: String,
    /// The resolved configuration the models were trained with.
    pub config: serde_json::Value,
    pub dims: ModelDims,
    pub vocab: Vocabulary,
    pub extractor: Vec<EncodedTensor>,
    pub predictor: Vec<EncodedTensor>,
}

impl Checkpoint {
    pub fn capture<T: Real, C: Serialize>(
        extractor: &Extractor<T>,
        predictor: &Predictor<T>,
        dims: ModelDims,
        vocab: &Vocabulary,
        config: &C,
        fingerprint: String,
    ) -> Result<Self> {
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            precision: T::PRECISION,
            fingerprint,
            config: serde_json::to_value(config)?,
            dims,
            vocab: vocab.clone(),
            extractor: extractor.encode(),
            predictor: predictor.encode(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.dims.vocab_size != ckpt.vocab.len() {
            return Err(Error::Checkpoint("vocabulary size does not match model dimensions".into()));
        }
        Ok(ckpt)
    }

    /// Rebuilds both models; the requested element type must match the
    /// stored precision.
    pub fn models<T: Real>(&self) -> Result<(Extractor<T>, Predictor<T>)> {
        if T::PRECISION != self.precision {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, requested {}",
                self.precision.name(),
                T::PRECISION.name()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut extractor = Extractor::new(&self.dims, &mut rng);
        let mut predictor = Predictor::new(&self.dims, &mut rng);
        extractor.decode_into(&self.extractor)?;
        predictor.decode_into(&self.predictor)?;
        Ok((extractor, predictor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Example};

    #[test]
    fn roundtrip_is_bit_exact() {
        let corpus: Corpus = vec![Example::new(vec!["a".into(), "b".into()], 1)].into_iter().collect();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let dims = ModelDims {
            vocab_size: vocab.len(),
            embedding_dim: 3,
            hidden_dim: 2,
            num_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ext = Extractor::<f32>::new(&dims, &mut rng);
        let pred = Predictor::<f32>::new(&dims, &mut rng);
        let cfg = serde_json::json!({"seed": 42});
        let ckpt = Checkpoint::capture(&ext, &pred, dims, &vocab, &cfg, fingerprint(&cfg).unwrap()).unwrap();
        let bytes = serde_json::to_vec(&ckpt).unwrap();
        let back = Checkpoint::from_json(&bytes).unwrap();
        let (e2, p2) = back.models::<f32>().unwrap();
        assert!(e2.bitwise_eq(&ext));
        assert!(p2.bitwise_eq(&pred));
        assert!(back.models::<f64>().is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let text = r#"{"format":"rationale-checkpoint","version":99}"#;
        assert!(Checkpoint::from_json(text.as_bytes()).is_err());
    }

    #[test]
    fn fingerprint_ignores_key_order() {
        let a = fingerprint(&serde_json::json!({"a": 1, "b": 2})).unwrap();
        let b = fingerprint(&serde_json::json!({"b": 2, "a": 1})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fingerprint(&serde_json::json!({"a": 1, "b": 3})).unwrap());
    }
}
