//! Minimal dense/recurrent layers with explicit backward passes.

mod adam;
mod layers;
mod param;
mod real;

pub use adam::Adam;
pub use layers::{softmax_rows, BiGru, BiGruCache, Embedding, Gru, GruCache, Linear};
pub use param::{EncodedTensor, Parameters};
pub use real::{Precision, Real};
