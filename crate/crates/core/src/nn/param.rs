use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

/// A model whose trainable state is a fixed, ordered list of matrices.
///
/// Gradient buffers are values of the same type, so optimizers and tests
/// can walk parameters and gradients in lockstep.
pub trait Parameters<T: Real>: Clone {
    fn tensors(&self) -> Vec<&Array2<T>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>>;

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.fill(T::zero()));
        out
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Exact equality of every stored bit.
    fn bitwise_eq(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.dim() == y.dim() && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits_u64() == q.to_bits_u64())
            })
    }

    fn encode(&self) -> Vec<EncodedTensor> {
        self.tensors().into_iter().map(EncodedTensor::encode).collect()
    }

    fn decode_into(&mut self, encoded: &[EncodedTensor]) -> Result<()> {
        let slots = self.tensors_mut();
        if slots.len() != encoded.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                encoded.len()
            )));
        }
        for (slot, enc) in slots.into_iter().zip(encoded) {
            let t = enc.decode::<T>()?;
            if t.dim() != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor shape {:?} does not match model shape {:?}",
                    t.dim(),
                    slot.dim()
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

trait ToBits {
    fn to_bits_u64(&self) -> u64;
}

impl<T: Real> ToBits for T {
    fn to_bits_u64(&self) -> u64 {
        let mut buf = Vec::with_capacity(8);
        self.write_bits(&mut buf);
        buf.resize(8, 0);
        u64::from_le_bytes(buf.try_into().unwrap())
    }
}

/// A tensor stored as its shape plus hex-encoded little-endian bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub rows: usize,
    pub cols: usize,
    pub bits: String,
}

impl EncodedTensor {
    pub fn encode<T: Real>(t: &Array2<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::BYTES);
        t.iter().for_each(|x| x.write_bits(&mut bytes));
        let (rows, cols) = t.dim();
        Self {
            rows,
            cols,
            bits: hex::encode(bytes),
        }
    }

    pub fn decode<T: Real>(&self) -> Result<Array2<T>> {
        let bytes = hex::decode(&self.bits).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if bytes.len() != self.rows * self.cols * T::BYTES {
            return Err(Error::Checkpoint("tensor byte length does not match shape/precision".into()));
        }
        let data: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_bits).collect();
        Array2::from_shape_vec((self.rows, self.cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
