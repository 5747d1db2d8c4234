//! Selective rationalization with interchangeable training criteria.
//!
//! An extractor selects a token mask, a predictor classifies full and
//! masked inputs, and the pair is trained under maximum mutual information
//! (MMI), MMI plus a penalty, or maximum remaining discrepancy (MRD): the
//! extractor is rewarded for removing exactly the tokens whose absence
//! changes the predicted label distribution. [`causal`] holds an exact
//! enumeration oracle for small discrete networks that the rest of the
//! crate is checked against.

pub mod causal;
pub mod corpus;
pub mod criteria;
pub mod distribution;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod parallel;
pub mod rationalizer;
pub mod synthetic;
pub mod training;

pub use distribution::Distribution;
pub use error::{Error, Result};
