//! Exact per-role loss tables for the training criteria.
//!
//! For each candidate rationale made of all causal, all spurious or all
//! noise variables, the loss a criterion would assign at the population
//! level is computed by enumeration, then compared: the extractor can move
//! from `N` (or `S`) towards `C` only if that lowers the loss.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::causal::{CausalSpec, RemovalDirection, Role};
use crate::criteria::combined_penalty_loss;
use crate::error::{Error, Result};

/// Losses within this distance count as equal.
pub const LOSS_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "kebab-case")]
pub enum LandscapeCriterion {
    /// `H(Y | Z)` in nats.
    Mmi,
    /// `H(Y | Z) + λ · [Z is spurious]`.
    #[serde(rename = "mmi+penalty")]
    MmiPenalty { lambda: f64 },
    /// `-E KL(P(Y | X) ‖ P(Y | X_{-Z}))`.
    Mrd,
}

impl LandscapeCriterion {
    pub fn label(&self) -> String {
        match self {
            Self::Mmi => "mmi".into(),
            Self::MmiPenalty { lambda } => format!("mmi+penalty (λ={lambda})"),
            Self::Mrd => "mrd".into(),
        }
    }
}

/// Whether a penalty weight leaves spurious features below noise, above
/// noise, or on par with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    UnderPenalty,
    Balanced,
    OverPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub criterion: LandscapeCriterion,
    pub loss_causal: f64,
    pub loss_spurious: f64,
    pub loss_noise: f64,
    /// `L(N) > L(C)`.
    pub noise_to_causal: bool,
    /// `L(S) > L(C)`.
    pub spurious_to_causal: bool,
    /// `|L(S) - L(N)| < LOSS_TIE_TOLERANCE`.
    pub spurious_equals_noise: bool,
    pub regime: Regime,
}

impl LandscapeRow {
    /// All three conditions of a well-behaved objective.
    pub fn favours_causal(&self) -> bool {
        self.noise_to_causal && self.spurious_to_causal && self.spurious_equals_noise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeReport {
    pub rows: Vec<LandscapeRow>,
}

fn role_set(spec: &CausalSpec, role: Role) -> Result<Vec<crate::causal::VarId>> {
    let vars = spec.with_role(role);
    if vars.is_empty() {
        return Err(Error::MissingRole(role.name()));
    }
    Ok(vars)
}

/// Exact loss of selecting every variable with `role` under `criterion`.
pub fn role_loss(spec: &CausalSpec, role: Role, criterion: LandscapeCriterion) -> Result<f64> {
    let z = role_set(spec, role)?;
    let y = spec.label();
    match criterion {
        LandscapeCriterion::Mmi => spec.conditional_entropy(y, &z),
        LandscapeCriterion::MmiPenalty { lambda } => {
            let penalty = if role == Role::Spurious { 1.0 } else { 0.0 };
            combined_penalty_loss(spec.conditional_entropy(y, &z)?, penalty, lambda)
        }
        LandscapeCriterion::Mrd => Ok(-spec.removal_divergence(&z, RemovalDirection::FullVsRemaining)?),
    }
}

pub fn landscape_report(spec: &CausalSpec, criteria: &[LandscapeCriterion]) -> Result<LandscapeReport> {
    for role in [Role::Causal, Role::Spurious, Role::Noise] {
        role_set(spec, role)?;
    }
    let rows = criteria
        .iter()
        .map(|&criterion| {
            let c = role_loss(spec, Role::Causal, criterion)?;
            let s = role_loss(spec, Role::Spurious, criterion)?;
            let n = role_loss(spec, Role::Noise, criterion)?;
            let tie = (s - n).abs() < LOSS_TIE_TOLERANCE;
            Ok(LandscapeRow {
                criterion,
                loss_causal: c,
                loss_spurious: s,
                loss_noise: n,
                noise_to_causal: n > c,
                spurious_to_causal: s > c,
                spurious_equals_noise: tie,
                regime: if tie {
                    Regime::Balanced
                } else if s < n {
                    Regime::UnderPenalty
                } else {
                    Regime::OverPenalty
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeReport { rows })
}

impl LandscapeReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| criterion | L(C) | L(S) | L(N) | N→C | S→C | L(S)=L(N) | regime |\n|---|---|---|---|---|---|---|---|\n",
        );
        let mark = |b: bool| if b { "yes" } else { "no" };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.6} | {:.6} | {:.6} | {} | {} | {} | {:?} |",
                r.criterion.label(),
                r.loss_causal,
                r.loss_spurious,
                r.loss_noise,
                mark(r.noise_to_causal),
                mark(r.spurious_to_causal),
                mark(r.spurious_equals_noise),
                r.regime
            );
        }
        out
    }
}
