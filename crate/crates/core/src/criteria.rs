//! Training criteria and their batch gradients.
//!
//! Every log takes `max(x, 1e-8)` so empty or saturated probabilities stay
//! finite. Batch helpers return sums of per-example terms already divided
//! by the full batch size, so results from consecutive chunks add up.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::rationalizer::RationaleMask;
use crate::Distribution;

pub const LOG_EPSILON: f64 = 1e-8;

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_EPSILON).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Predict the label from the selected tokens.
    Mmi,
    /// MMI plus a penalty on selecting known spurious tokens.
    #[serde(rename = "mmi+penalty", alias = "mmi-penalty")]
    MmiPenalty,
    /// Maximise the label-distribution shift caused by removing the selection.
    Mrd,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Mmi => "mmi",
            Criterion::MmiPenalty => "mmi+penalty",
            Criterion::Mrd => "mrd",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mmi" => Ok(Self::Mmi),
            "mmi+penalty" | "mmi-penalty" | "penalty" => Ok(Self::MmiPenalty),
            "mrd" => Ok(Self::Mrd),
            other => Err(Error::Config(format!("unknown criterion `{other}` (mmi, mmi+penalty, mrd)"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the MMI penalty term charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    /// Fraction of the example's tokens that are selected and flagged spurious.
    SpuriousSelection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionConfig {
    pub criterion: Criterion,
    /// Target selected fraction `s`.
    pub sparsity: f64,
    pub lambda_sparsity: f64,
    pub lambda_coherence: f64,
    pub lambda_penalty: f64,
    pub penalty: PenaltyKind,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Mrd,
            sparsity: 0.2,
            lambda_sparsity: 1.0,
            lambda_coherence: 0.05,
            lambda_penalty: 1.0,
            penalty: PenaltyKind::SpuriousSelection,
        }
    }
}

impl CriterionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Config(format!("sparsity must lie in (0, 1], got {}", self.sparsity)));
        }
        for (name, v) in [
            ("lambda_sparsity", self.lambda_sparsity),
            ("lambda_coherence", self.lambda_coherence),
            ("lambda_penalty", self.lambda_penalty),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Predictor,
    Extractor,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Predictor => "predictor",
            Phase::Extractor => "extractor",
        })
    }
}

/// Per-step loss components (batch means). Terms a criterion does not use
/// are zero; `sparsity`, `coherence` and `penalty` include their weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub full_ce: f64,
    pub rationale_ce: f64,
    pub complement_ce: f64,
    pub kl: f64,
    pub sparsity: f64,
    pub coherence: f64,
    pub penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.full_ce,
            self.rationale_ce,
            self.complement_ce,
            self.kl,
            self.sparsity,
            self.coherence,
            self.penalty,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn add(&mut self, o: &Self) {
        self.full_ce += o.full_ce;
        self.rationale_ce += o.rationale_ce;
        self.complement_ce += o.complement_ce;
        self.kl += o.kl;
        self.sparsity += o.sparsity;
        self.coherence += o.coherence;
        self.penalty += o.penalty;
        self.total += o.total;
    }
}

/// Mean `-log max(p(y), ε)` over examples.
pub fn cross_entropy_loss(predictions: &[Distribution], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::Shape(format!("label {y} outside {} classes", p.len())));
        }
        sum -= clamped_ln(p.prob(y));
    }
    Ok(sum / labels.len() as f64)
}

/// `KL(p ‖ q)` in nats; infinite when `q` misses mass that `p` has.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Removal-discrepancy objective `-KL(P(Ŷ | X) ‖ P(Ŷ | X_{-Z}))`, to be minimised.
pub fn mrd_objective(full: &Distribution, complement: &Distribution) -> Result<f64> {
    Ok(-kl_divergence(full, complement)?)
}

/// `λ1 |‖M‖₁ / l - s| + λ2 Σ_t |m_t - m_{t-1}|` for one example, `l = |M|`.
pub fn sparsity_coherence_penalty(mask: &RationaleMask, s: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Shape("penalty of an empty mask".into()));
    }
    let m = mask.values();
    let sparsity = (mask.selected_count() / m.len() as f64 - s).abs();
    let coherence: f64 = m.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(lambda1 * sparsity + lambda2 * coherence)
}

/// `mmi_loss + λ · penalty`.
pub fn combined_penalty_loss(mmi_loss: f64, penalty: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("penalty weight must be non-negative, got {lambda}")));
    }
    Ok(mmi_loss + lambda * penalty)
}

/// Cross-entropy of softmax outputs; returns the scaled sum and the
/// gradient with respect to the logits.
pub fn cross_entropy_batch<T: Real>(probs: &Array2<T>, labels: &[usize], scale: f64) -> (f64, Array2<T>) {
    let mut loss = 0.0;
    let mut grad = probs.clone();
    let s = T::of(scale);
    for (i, &y) in labels.iter().enumerate() {
        loss -= clamped_ln(probs[[i, y]].as_f64());
        grad[[i, y]] -= T::one();
    }
    grad.mapv_inplace(|g| g * s);
    (loss * scale, grad)
}

/// `Σ_i KL(p_i ‖ q_i)·scale` for softmax rows, and its gradient with respect
/// to the logits of `q` (`p` is held fixed).
pub fn kl_batch<T: Real>(p: &Array2<T>, q: &Array2<T>, scale: f64) -> (f64, Array2<T>) {
    let mut kl = 0.0;
    for (pr, qr) in p.rows().into_iter().zip(q.rows()) {
        for (&a, &b) in pr.iter().zip(qr.iter()) {
            let a = a.as_f64();
            if a > 0.0 {
                kl += a * (clamped_ln(a) - clamped_ln(b.as_f64()));
            }
        }
    }
    // d/dlogits_q Σ_k p_k (log p_k - log q_k) = q - p (rows of p sum to 1)
    let grad = (q - p).mapv(|g| g * T::of(scale));
    (kl * scale, grad)
}

/// Batch form of the sparsity and coherence terms over non-PAD positions.
/// Returns `(λ1 term, λ2 term, d/dm)`; the mask may be hard or relaxed.
pub fn sparsity_coherence_batch<T: Real>(
    mask: ArrayView2<'_, T>,
    lengths: &[usize],
    s: f64,
    lambda1: f64,
    lambda2: f64,
    scale: f64,
) -> (f64, f64, Array2<T>) {
    let mut grad = Array2::zeros(mask.raw_dim());
    let (mut sp, mut coh) = (0.0, 0.0);
    let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    for (i, &len) in lengths.iter().enumerate() {
        if len == 0 {
            continue;
        }
        let row = mask.row(i);
        let frac = row.iter().take(len).map(|m| m.as_f64()).sum::<f64>() / len as f64;
        let dev = frac - s;
        sp += lambda1 * dev.abs();
        let g_sp = lambda1 * sign(dev) / len as f64 * scale;
        for t in 0..len {
            grad[[i, t]] += T::of(g_sp);
        }
        for t in 1..len {
            let d = row[t].as_f64() - row[t - 1].as_f64();
            coh += lambda2 * d.abs();
            let g = T::of(lambda2 * sign(d) * scale);
            grad[[i, t]] += g;
            grad[[i, t - 1]] -= g;
        }
    }
    (sp * scale, coh * scale, grad)
}

/// `λ Σ_t m_t·spurious_t / l` summed over examples, and `d/dm`.
pub fn spurious_penalty_batch<T: Real>(
    mask: ArrayView2<'_, T>,
    spurious: ArrayView2<'_, bool>,
    lengths: &[usize],
    lambda: f64,
    scale: f64,
) -> (f64, Array2<T>) {
    let mut grad = Array2::zeros(mask.raw_dim());
    let mut pen = 0.0;
    for (i, &len) in lengths.iter().enumerate() {
        for t in 0..len {
            if spurious[[i, t]] {
                pen += lambda * mask[[i, t]].as_f64() / len as f64;
                grad[[i, t]] = T::of(lambda * scale / len as f64);
            }
        }
    }
    (pen * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn d(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn cross_entropy_clamps() {
        let ce = cross_entropy_loss(&[d(&[1.0, 0.0])], &[1]).unwrap();
        assert!((ce - (-(1e-8f64).ln())).abs() < 1e-9);
        let ce = cross_entropy_loss(&[d(&[0.25, 0.75]), d(&[0.5, 0.5])], &[1, 0]).unwrap();
        assert!((ce - (-(0.75f64).ln() - (0.5f64).ln()) / 2.0).abs() < 1e-12);
        assert!(cross_entropy_loss(&[d(&[0.5, 0.5])], &[2]).is_err());
    }

    #[test]
    fn kl_edge_cases() {
        assert_eq!(kl_divergence(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap(), 0.0);
        assert_eq!(kl_divergence(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        assert!(kl_divergence(&d(&[0.0, 1.0]), &d(&[0.5, 0.5])).unwrap() > 0.0);
        assert!(matches!(
            kl_divergence(&d(&[0.5, 0.5]), &d(&[0.2, 0.3, 0.5])),
            Err(Error::SupportMismatch(2, 3))
        ));
        assert!((mrd_objective(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])).unwrap() + 0.368_064_0).abs() < 1e-6);
    }

    #[test]
    fn penalty_values() {
        let m = RationaleMask::hard(&[false, true, true, false, false, false, false, false, false, false]);
        assert!((sparsity_coherence_penalty(&m, 0.2, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let m = RationaleMask::hard(&[true, false, true, false]);
        let v = sparsity_coherence_penalty(&m, 0.2, 2.0, 0.5).unwrap();
        assert!((v - (2.0 * 0.3 + 0.5 * 3.0)).abs() < 1e-12);
        assert_eq!(combined_penalty_loss(0.5, 1.0, 0.25).unwrap(), 0.75);
        assert!(combined_penalty_loss(0.5, 1.0, -1.0).is_err());
    }

    #[test]
    fn batch_terms_agree_with_scalar_forms() {
        let probs = array![[0.2f64, 0.8], [0.6, 0.4]];
        let (ce, _) = cross_entropy_batch(&probs, &[1, 1], 0.5);
        let ce_ref = cross_entropy_loss(&[d(&[0.2, 0.8]), d(&[0.6, 0.4])], &[1, 1]).unwrap();
        assert!((ce - ce_ref).abs() < 1e-12);
        let q = array![[0.5f64, 0.5], [0.1, 0.9]];
        let (kl, _) = kl_batch(&probs, &q, 0.5);
        let kl_ref = (kl_divergence(&d(&[0.2, 0.8]), &d(&[0.5, 0.5])).unwrap()
            + kl_divergence(&d(&[0.6, 0.4]), &d(&[0.1, 0.9])).unwrap())
            / 2.0;
        assert!((kl - kl_ref).abs() < 1e-12);
        let mask = array![[1.0f64, 0.0, 1.0, 0.0], [1.0, 1.0, 0.0, 0.0]];
        let (sp, coh, _) = sparsity_coherence_batch(mask.view(), &[4, 2], 0.2, 1.0, 1.0, 0.5);
        let a = sparsity_coherence_penalty(&RationaleMask::hard(&[true, false, true, false]), 0.2, 1.0, 1.0).unwrap();
        let b = sparsity_coherence_penalty(&RationaleMask::hard(&[true, true]), 0.2, 1.0, 1.0).unwrap();
        assert!((sp + coh - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let p = array![[0.3f64, 0.7]];
        let logits = array![[0.2f64, -0.4]];
        let f = |l: &Array2<f64>| kl_batch(&p, &crate::nn::softmax_rows(l), 1.0).0;
        let (_, g) = kl_batch(&p, &crate::nn::softmax_rows(&logits), 1.0);
        for k in 0..2 {
            let mut a = logits.clone();
            let mut b = logits.clone();
            a[[0, k]] += 1e-6;
            b[[0, k]] -= 1e-6;
            assert!(((f(&a) - f(&b)) / 2e-6 - g[[0, k]]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(a in prop::collection::vec(0.0f64..1.0, 2..6), b in prop::collection::vec(0.01f64..1.0, 2..6)) {
            let n = a.len().min(b.len());
            prop_assume!(a[..n].iter().sum::<f64>() > 0.0);
            let p = Distribution::from_weights(a[..n].to_vec()).unwrap();
            let q = Distribution::from_weights(b[..n].to_vec()).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        }

        #[test]
        fn penalty_is_non_negative(bits in prop::collection::vec(any::<bool>(), 1..30), s in 0.01f64..1.0) {
            let m = RationaleMask::hard(&bits);
            prop_assert!(sparsity_coherence_penalty(&m, s, 1.0, 1.0).unwrap() >= 0.0);
        }
    }
}
