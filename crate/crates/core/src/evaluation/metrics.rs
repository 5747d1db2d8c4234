use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rationalizer::RationaleMask;

/// Precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool confusion counts over the whole corpus.
    #[default]
    Micro,
    /// Average per-example scores.
    Macro,
}

fn counts(pred: &RationaleMask, gold: &RationaleMask) -> Result<(usize, usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!("predicted mask of {} vs gold mask of {}", pred.len(), gold.len())));
    }
    let (p, g) = (pred.to_bools()?, gold.to_bools()?);
    let mut c = (0, 0, 0);
    for (a, b) in p.into_iter().zip(g) {
        match (a, b) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// Token-level overlap between predicted and gold rationales, micro-averaged.
pub fn token_prf(pred: &[RationaleMask], gold: &[RationaleMask]) -> Result<Prf> {
    token_prf_with(pred, gold, Averaging::Micro)
}

pub fn token_prf_with(pred: &[RationaleMask], gold: &[RationaleMask], averaging: Averaging) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!("{} predicted masks vs {} gold masks", pred.len(), gold.len())));
    }
    let per_example = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| counts(p, g))
        .collect::<Result<Vec<_>>>()?;
    match averaging {
        Averaging::Micro => {
            let (tp, fp, fn_) = per_example
                .iter()
                .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
            Ok(Prf::from_counts(tp, fp, fn_))
        }
        Averaging::Macro => {
            if per_example.is_empty() {
                return Ok(Prf::default());
            }
            let n = per_example.len() as f64;
            let (p, r) = per_example.iter().fold((0.0, 0.0), |acc, &(tp, fp, fn_)| {
                let s = Prf::from_counts(tp, fp, fn_);
                (acc.0 + s.precision, acc.1 + s.recall)
            });
            let (precision, recall) = (p / n, r / n);
            Ok(Prf {
                precision,
                recall,
                f1: harmonic(precision, recall),
            })
        }
    }
}

/// Mean selected fraction of each (unpadded) mask, in percent.
pub fn measured_sparsity(masks: &[RationaleMask]) -> f64 {
    let nonempty: Vec<&RationaleMask> = masks.iter().filter(|m| !m.is_empty()).collect();
    if nonempty.is_empty() {
        return 0.0;
    }
    100.0 * nonempty.iter().map(|m| m.selected_count() / m.len() as f64).sum::<f64>() / nonempty.len() as f64
}

/// Mean and sample standard deviation (`n - 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
