use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, measured_sparsity, token_prf, Prf};
use crate::corpus::EncodedCorpus;
use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::nn::Real;
use crate::parallel;
use crate::rationalizer::{complement_multiplier, Extractor, Predictor, RationaleMask, SampleMode};

/// Deterministic (argmax) evaluation of a model pair on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub examples: usize,
    /// Predicted masks, one per example, without padding.
    pub masks: Vec<RationaleMask>,
    pub full_accuracy: f64,
    pub rationale_accuracy: f64,
    pub complement_accuracy: f64,
    /// Percent of tokens selected.
    pub sparsity: f64,
    /// Overlap with gold masks over the annotated examples, if any.
    pub prf: Option<Prf>,
}

fn argmax_rows<T: Real>(probs: &ndarray::Array2<T>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
                .0
        })
        .collect()
}

pub fn evaluate_split<T: Real>(
    extractor: &Extractor<T>,
    predictor: &Predictor<T>,
    data: &EncodedCorpus,
    batch_size: usize,
    temperature: f64,
) -> Result<SplitEval> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let batches = data.batches(batch_size, 0, None);
    let per_batch = parallel::map_slice(&batches, |batch| -> Result<_> {
        let (_, mask) = extractor.select(batch, temperature, SampleMode::Eval, None)?;
        let pad = batch.pad_mask::<T>();
        let full = argmax_rows(&predictor.forward(batch, None)?.probs);
        let rat = argmax_rows(&predictor.forward(batch, Some(mask.hard.view()))?.probs);
        let comp_mult = complement_multiplier(mask.hard.view(), pad.view());
        let comp = argmax_rows(&predictor.forward(batch, Some(comp_mult.view()))?.probs);
        let masks: Vec<RationaleMask> = (0..batch.size()).map(|i| mask.row(i, batch.lengths[i])).collect();
        let correct = |preds: &[usize]| preds.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
        Ok((masks, correct(&full), correct(&rat), correct(&comp)))
    });
    let mut masks = Vec::with_capacity(data.len());
    let (mut full, mut rat, mut comp) = (0, 0, 0);
    for r in per_batch {
        let (m, f, r_, c) = r?;
        masks.extend(m);
        full += f;
        rat += r_;
        comp += c;
    }
    let (pred, gold): (Vec<RationaleMask>, Vec<RationaleMask>) = masks
        .iter()
        .zip(&data.gold)
        .filter_map(|(m, g)| g.as_ref().map(|g| (m.clone(), RationaleMask::hard(g))))
        .unzip();
    let prf = if gold.is_empty() { None } else { Some(token_prf(&pred, &gold)?) };
    let n = data.len() as f64;
    Ok(SplitEval {
        examples: data.len(),
        sparsity: measured_sparsity(&masks),
        masks,
        full_accuracy: full as f64 / n,
        rationale_accuracy: rat as f64 / n,
        complement_accuracy: comp as f64 / n,
        prf,
    })
}

/// One seed's test-set row, all values in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub sparsity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl SeedResult {
    pub fn from_eval(seed: u64, eval: &SplitEval) -> Self {
        let prf = eval.prf.unwrap_or_default();
        Self {
            seed,
            sparsity: eval.sparsity,
            precision: 100.0 * prf.precision,
            recall: 100.0 * prf.recall,
            f1: 100.0 * prf.f1,
            accuracy: 100.0 * eval.full_accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sparsity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Rationale quality over one or more seeds for a single configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criterion: Criterion,
    /// Fingerprint of the resolved configuration with the seed excluded.
    pub config_fingerprint: String,
    pub dataset: String,
    pub runs: Vec<SeedResult>,
    pub mean: Summary,
    pub std: Summary,
}

impl EvalReport {
    pub fn new(criterion: Criterion, config_fingerprint: String, dataset: String, runs: Vec<SeedResult>) -> Self {
        let col = |f: fn(&SeedResult) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (s, p, r, f1, acc) = (
            col(|r| r.sparsity),
            col(|r| r.precision),
            col(|r| r.recall),
            col(|r| r.f1),
            col(|r| r.accuracy),
        );
        let mean = Summary {
            sparsity: s.0,
            precision: p.0,
            recall: r.0,
            f1: f1.0,
            accuracy: acc.0,
        };
        let std = Summary {
            sparsity: s.1,
            precision: p.1,
            recall: r.1,
            f1: f1.1,
            accuracy: acc.1,
        };
        Self {
            criterion,
            config_fingerprint,
            dataset,
            mean,
            std,
            runs,
        }
    }

    /// Merges per-seed reports that share criterion, dataset and fingerprint.
    pub fn combine(reports: &[EvalReport]) -> Result<Self> {
        let first = reports.first().ok_or_else(|| Error::Config("no reports to combine".into()))?;
        for r in &reports[1..] {
            if r.config_fingerprint != first.config_fingerprint {
                return Err(Error::Config(format!(
                    "fingerprint mismatch: {} vs {}",
                    first.config_fingerprint, r.config_fingerprint
                )));
            }
            if r.criterion != first.criterion || r.dataset != first.dataset {
                return Err(Error::Config("reports differ in criterion or dataset".into()));
            }
        }
        let mut runs: Vec<SeedResult> = reports.iter().flat_map(|r| r.runs.clone()).collect();
        runs.sort_by_key(|r| r.seed);
        if runs.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(Error::Config("duplicate seed across reports".into()));
        }
        Ok(Self::new(first.criterion, first.config_fingerprint.clone(), first.dataset.clone(), runs))
    }

    /// Markdown table with one-decimal percentages.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "**{}** on `{}` (config `{}`)\n", self.criterion, self.dataset, short(&self.config_fingerprint));
        out.push_str("| seed | S | P | R | F1 | Acc |\n|---|---|---|---|---|---|\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.1} |",
                r.seed, r.sparsity, r.precision, r.recall, r.f1, r.accuracy
            );
        }
        let (m, s) = (&self.mean, &self.std);
        let _ = writeln!(
            out,
            "| mean ± std | {:.1} ± {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} |",
            m.sparsity, s.sparsity, m.precision, s.precision, m.recall, s.recall, m.f1, s.f1, m.accuracy, s.accuracy
        );
        out
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

/// Side-by-side markdown table of several reports, one row per criterion.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("| criterion | dataset | seeds | S | P | R | F1 |\n|---|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} | {:.1} ± {:.1} |",
            r.criterion,
            r.dataset,
            r.runs.len(),
            r.mean.sparsity,
            r.mean.precision,
            r.std.precision,
            r.mean.recall,
            r.std.recall,
            r.mean.f1,
            r.std.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, f1: f64) -> SeedResult {
        SeedResult {
            seed,
            sparsity: 20.0,
            precision: f1,
            recall: f1,
            f1,
            accuracy: 90.0,
        }
    }

    #[test]
    fn aggregates_over_seeds() {
        let r = EvalReport::new(Criterion::Mrd, "abc".into(), "synthetic".into(), vec![row(0, 90.0), row(1, 92.0), row(2, 94.0)]);
        assert!((r.mean.f1 - 92.0).abs() < 1e-12);
        assert!((r.std.f1 - 2.0).abs() < 1e-12);
        let md = r.to_markdown();
        assert!(md.contains("| 1 | 20.0 | 92.0 | 92.0 | 92.0 | 90.0 |"));
        assert!(md.contains("92.0 ± 2.0"));
    }

    #[test]
    fn combine_checks_fingerprints() {
        let a = EvalReport::new(Criterion::Mmi, "f1".into(), "d".into(), vec![row(0, 50.0)]);
        let b = EvalReport::new(Criterion::Mmi, "f1".into(), "d".into(), vec![row(1, 70.0)]);
        let c = EvalReport::new(Criterion::Mmi, "f2".into(), "d".into(), vec![row(2, 70.0)]);
        let ab = EvalReport::combine(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(ab.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1]);
        assert!((ab.mean.f1 - 60.0).abs() < 1e-12);
        assert!(EvalReport::combine(&[a.clone(), c]).is_err());
        assert!(EvalReport::combine(&[a.clone(), a]).is_err());
    }
}
