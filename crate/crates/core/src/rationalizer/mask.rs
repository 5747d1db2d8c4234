//! Rationale masks and the algebra connecting them to inputs.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Soft,
    Hard,
}

/// Per-token selection values for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleMask {
    values: Vec<f64>,
    mode: MaskMode,
}

impl RationaleMask {
    pub fn hard(bits: &[bool]) -> Self {
        Self {
            values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            mode: MaskMode::Hard,
        }
    }

    pub fn soft(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("soft mask values must lie in [0, 1]".into()));
        }
        Ok(Self {
            values,
            mode: MaskMode::Soft,
        })
    }

    pub fn zeros(len: usize) -> Self {
        Self::hard(&vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        Self::hard(&vec![true; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Selected positions; errors for soft masks.
    pub fn to_bools(&self) -> Result<Vec<bool>> {
        match self.mode {
            MaskMode::Hard => Ok(self.values.iter().map(|&v| v > 0.5).collect()),
            MaskMode::Soft => Err(Error::SoftMask),
        }
    }

    /// Thresholds a soft mask at 0.5 (ties select).
    pub fn binarize(&self) -> Self {
        Self::hard(&self.values.iter().map(|&v| v >= 0.5).collect::<Vec<_>>())
    }

    /// `1 - M`.
    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            mode: self.mode,
        }
    }

    pub fn selected_count(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Whether [`sample_selection`] draws Gumbel noise or takes the argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Eval,
}

/// Batched selection: hard forward values plus the relaxed probabilities
/// whose gradient the straight-through estimator uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMask<T> {
    pub hard: Array2<T>,
    pub soft: Array2<T>,
    pub temperature: f64,
}

impl<T: Real> SampledMask<T> {
    /// Per-example mask for row `i`, restricted to its first `len` tokens.
    pub fn row(&self, i: usize, len: usize) -> RationaleMask {
        RationaleMask::hard(&self.hard.row(i).iter().take(len).map(|&v| v > T::of(0.5)).collect::<Vec<_>>())
    }
}

/// Logistic noise `g1 - g0` for two independent Gumbel draws, `B × L`.
pub fn gumbel_difference<T: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| {
        let gumbel = |u: f64| -(-u.ln()).ln();
        let u0: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        T::of(gumbel(u1) - gumbel(u0))
    })
}

/// Turns selection gaps `Δ = logit(select) - logit(skip)` into a mask.
///
/// Train mode adds `noise` (Gumbel differences) and relaxes with
/// `temperature`; eval mode is a deterministic argmax where `Δ = 0`
/// selects. PAD positions are always 0.
pub fn sample_selection<T: Real>(
    gap: ArrayView2<'_, T>,
    pad: ArrayView2<'_, T>,
    temperature: f64,
    mode: SampleMode,
    noise: Option<ArrayView2<'_, T>>,
) -> Result<SampledMask<T>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    if gap.dim() != pad.dim() {
        return Err(Error::Shape(format!("gap {:?} vs pad {:?}", gap.dim(), pad.dim())));
    }
    let tau = T::of(temperature);
    let mut perturbed = gap.to_owned();
    if mode == SampleMode::Train {
        let noise = noise.ok_or_else(|| Error::Config("train-mode sampling needs noise".into()))?;
        if noise.dim() != gap.dim() {
            return Err(Error::Shape("noise shape differs from logits".into()));
        }
        perturbed += &noise;
    }
    let mut hard = Array2::zeros(gap.raw_dim());
    let mut soft = Array2::zeros(gap.raw_dim());
    Zip::from(&mut hard)
        .and(&mut soft)
        .and(&perturbed)
        .and(pad)
        .for_each(|h, s, &d, &p| {
            if p > T::zero() {
                *h = if d >= T::zero() { T::one() } else { T::zero() };
                *s = T::one() / (T::one() + (-d / tau).exp());
            }
        });
    Ok(SampledMask {
        hard,
        soft,
        temperature,
    })
}

fn check_lengths<T: Real>(xs: &[Array2<T>], mask: ArrayView2<'_, T>) -> Result<()> {
    if mask.ncols() != xs.len() || xs.iter().any(|x| x.nrows() != mask.nrows()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match a sequence of {} positions",
            mask.dim(),
            xs.len()
        )));
    }
    Ok(())
}

/// `Z = M ⊙ X`: masked positions become zero vectors; positions are kept.
pub fn apply_mask<T: Real>(xs: &[Array2<T>], mask: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
    check_lengths(xs, mask)?;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let col = mask.column(t).insert_axis(ndarray::Axis(1)).to_owned();
            x * &col
        })
        .collect())
}

/// `X_{-Z} = (1 - M) ⊙ X`, with PAD positions kept at zero.
pub fn complement_input<T: Real>(
    xs: &[Array2<T>],
    mask: ArrayView2<'_, T>,
    pad: ArrayView2<'_, T>,
) -> Result<Vec<Array2<T>>> {
    check_lengths(xs, mask)?;
    apply_mask(xs, complement_multiplier(mask, pad).view())
}

/// `pad ⊙ (1 - M)`.
pub fn complement_multiplier<T: Real>(mask: ArrayView2<'_, T>, pad: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = pad.to_owned();
    Zip::from(&mut out).and(mask).for_each(|o, &m| *o = *o * (T::one() - m));
    out
}

/// Token view of `Z`: unselected positions become `None`.
pub fn mask_tokens<'a, S: AsRef<str>>(tokens: &'a [S], mask: &RationaleMask) -> Result<Vec<Option<&'a str>>> {
    if tokens.len() != mask.len() {
        return Err(Error::Shape(format!("{} tokens vs mask of {}", tokens.len(), mask.len())));
    }
    let bits = mask.to_bools()?;
    Ok(tokens
        .iter()
        .zip(bits)
        .map(|(t, b)| b.then_some(t.as_ref()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq() -> Vec<Array2<f64>> {
        vec![array![[1.0, 2.0]], array![[3.0, 4.0]], array![[5.0, 6.0]]]
    }

    #[test]
    fn apply_mask_identity_and_zero() {
        let xs = seq();
        let ones = Array2::ones((1, 3));
        assert_eq!(apply_mask(&xs, ones.view()).unwrap(), xs);
        let zeros = Array2::zeros((1, 3));
        assert!(apply_mask(&xs, zeros.view()).unwrap().iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn apply_mask_keeps_positions() {
        let xs = seq();
        let m = array![[1.0, 0.0, 1.0]];
        let z = apply_mask(&xs, m.view()).unwrap();
        assert_eq!(z.len(), 3);
        assert_eq!(z[0], xs[0]);
        assert_eq!(z[1], array![[0.0, 0.0]]);
        assert_eq!(z[2], xs[2]);
        assert!(apply_mask(&xs, array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn complement_partitions_positions() {
        let xs = seq();
        let pad = Array2::ones((1, 3));
        let m = array![[1.0, 0.0, 1.0]];
        let c = complement_input(&xs, m.view(), pad.view()).unwrap();
        assert_eq!(c[1], xs[1]);
        assert!(c[0].iter().chain(c[2].iter()).all(|&v| v == 0.0));
        let all = complement_input(&xs, Array2::zeros((1, 3)).view(), pad.view()).unwrap();
        assert_eq!(all, xs);
        let none = complement_input(&xs, Array2::ones((1, 3)).view(), pad.view()).unwrap();
        assert!(none.iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn eval_mode_is_argmax_and_ignores_pad() {
        let gap = array![[-3.0, -2.0, 4.0, 5.0, 9.0]];
        let pad = array![[1.0, 1.0, 1.0, 1.0, 0.0]];
        let m = sample_selection(gap.view(), pad.view(), 1.0, SampleMode::Eval, None).unwrap();
        assert_eq!(m.hard, array![[0.0, 0.0, 1.0, 1.0, 0.0]]);
        let again = sample_selection(gap.view(), pad.view(), 1.0, SampleMode::Eval, None).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn eval_tie_selects() {
        let gap = array![[0.0]];
        let pad = array![[1.0]];
        let m = sample_selection(gap.view(), pad.view(), 1.0, SampleMode::Eval, None).unwrap();
        assert_eq!(m.hard[[0, 0]], 1.0);
        assert_eq!(m.soft[[0, 0]], 0.5);
    }

    #[test]
    fn temperature_must_be_positive() {
        let gap = array![[0.0]];
        assert!(sample_selection(gap.view(), gap.view(), 0.0, SampleMode::Eval, None).is_err());
        assert!(sample_selection(gap.view(), gap.view(), -1.0, SampleMode::Eval, None).is_err());
    }

    #[test]
    fn soft_masks_must_be_binarized() {
        let soft = RationaleMask::soft(vec![0.2, 0.7]).unwrap();
        assert!(matches!(soft.to_bools(), Err(Error::SoftMask)));
        assert_eq!(soft.binarize().to_bools().unwrap(), vec![false, true]);
        assert!(RationaleMask::soft(vec![1.5]).is_err());
    }

    #[test]
    fn token_view() {
        let toks = ["x1", "x2", "x3"];
        let z = mask_tokens(&toks, &RationaleMask::hard(&[true, false, true])).unwrap();
        assert_eq!(z, vec![Some("x1"), None, Some("x3")]);
        let c = mask_tokens(&toks, &RationaleMask::hard(&[true, false, true]).complement()).unwrap();
        assert_eq!(c, vec![None, Some("x2"), None]);
    }
}
