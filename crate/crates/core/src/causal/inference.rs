//! Exact inference by full enumeration of the joint state space.
//!
//! KL divergences are in nats, mutual information in bits
//! (`bits = nats / ln 2`).

use std::collections::HashSet;

use super::spec::{Assignment, CausalSpec, VarId};
use crate::distribution::Distribution;
use crate::error::{Error, Result};

/// Argument order for [`CausalSpec::removal_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalDirection {
    /// `E_X KL(P(Y | X_-W) || P(Y | X))`
    RemainingVsFull,
    /// `E_X KL(P(Y | X) || P(Y | X_-W))`, the training direction.
    FullVsRemaining,
}

/// A marginal table over an ordered list of variables, mixed radix with the
/// first variable most significant.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub vars: Vec<VarId>,
    pub cards: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn index(&self, values: &[usize]) -> usize {
        values
            .iter()
            .zip(&self.cards)
            .fold(0, |acc, (&v, &c)| acc * c + v)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.cards.len()];
        for (slot, &c) in out.iter_mut().zip(&self.cards).rev() {
            *slot = index % c;
            index /= c;
        }
        out
    }

    pub fn get(&self, values: &[usize]) -> f64 {
        self.probs[self.index(values)]
    }
}

fn check_disjoint(spec: &CausalSpec, sets: &[&[VarId]]) -> Result<()> {
    let mut seen = HashSet::new();
    for set in sets {
        for &v in *set {
            if v.0 >= spec.len() {
                return Err(Error::UnknownVariable(format!("#{}", v.0)));
            }
            if !seen.insert(v) {
                return Err(Error::OverlappingSets(spec.name(v).to_string()));
            }
        }
    }
    Ok(())
}

/// Advances a mixed-radix odometer; returns false after the last state.
fn advance(values: &mut [usize], cards: &[usize]) -> bool {
    for i in (0..values.len()).rev() {
        values[i] += 1;
        if values[i] < cards[i] {
            return true;
        }
        values[i] = 0;
    }
    false
}

fn entropy_nats(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

impl CausalSpec {
    /// Product of CPT factors for a full assignment.
    pub fn joint_probability(&self, assignment: &Assignment) -> Result<f64> {
        let values = assignment.dense(self)?;
        Ok(self.joint_of_values(&values))
    }

    fn joint_of_values(&self, values: &[usize]) -> f64 {
        (0..self.len())
            .map(|i| {
                let id = VarId(i);
                self.variable(id).cpt[self.cpt_row(id, values)][values[i]]
            })
            .product()
    }

    /// Full joint table in variable order (first variable most significant).
    pub fn joint_table(&self) -> &[f64] {
        self.joint_cache().get_or_init(|| {
            let cards: Vec<usize> = self.variables().iter().map(|v| v.cardinality).collect();
            let mut values = vec![0; cards.len()];
            let mut table = Vec::with_capacity(self.state_count() as usize);
            loop {
                table.push(self.joint_of_values(&values));
                if !advance(&mut values, &cards) {
                    break;
                }
            }
            table
        })
    }

    /// Exact marginal over `vars` (in the given order).
    pub fn marginal(&self, vars: &[VarId]) -> Result<Marginal> {
        check_disjoint(self, &[vars])?;
        let cards: Vec<usize> = vars.iter().map(|v| self.variable(*v).cardinality).collect();
        let size: usize = cards.iter().product();
        let mut probs = vec![0.0; size];
        let all_cards: Vec<usize> = self.variables().iter().map(|v| v.cardinality).collect();
        let mut values = vec![0; all_cards.len()];
        for &p in self.joint_table() {
            let key = vars
                .iter()
                .zip(&cards)
                .fold(0, |acc, (v, &c)| acc * c + values[v.0]);
            probs[key] += p;
            advance(&mut values, &all_cards);
        }
        Ok(Marginal {
            vars: vars.to_vec(),
            cards,
            probs,
        })
    }

    /// `P(target | given)` by enumeration.
    pub fn conditional_distribution(&self, target: VarId, given: &Assignment) -> Result<Distribution> {
        given.validate(self)?;
        if given.contains(target) {
            return Err(Error::OverlappingSets(self.name(target).to_string()));
        }
        let mut vars: Vec<VarId> = given.iter().map(|(v, _)| v).collect();
        vars.push(target);
        let m = self.marginal(&vars)?;
        let mut key: Vec<usize> = given.iter().map(|(_, x)| x).collect();
        key.push(0);
        let card = self.variable(target).cardinality;
        let weights: Vec<f64> = (0..card)
            .map(|y| {
                *key.last_mut().unwrap() = y;
                m.get(&key)
            })
            .collect();
        Distribution::from_weights(weights)
    }

    /// Exact `I(a; b)` in bits.
    pub fn mutual_information(&self, a: &[VarId], b: &[VarId]) -> Result<f64> {
        check_disjoint(self, &[a, b])?;
        let vars: Vec<VarId> = a.iter().chain(b).copied().collect();
        let joint = self.marginal(&vars)?;
        let ma = self.marginal(a)?;
        let mb = self.marginal(b)?;
        let mut mi = 0.0;
        for (i, &p) in joint.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let values = joint.decode(i);
            let (va, vb) = values.split_at(a.len());
            mi += p * (p / (ma.get(va) * mb.get(vb))).ln();
        }
        Ok((mi / std::f64::consts::LN_2).max(0.0))
    }

    /// Exact conditional entropy `H(target | given)` in nats.
    pub fn conditional_entropy(&self, target: VarId, given: &[VarId]) -> Result<f64> {
        check_disjoint(self, &[&[target], given])?;
        let mut vars = given.to_vec();
        vars.push(target);
        let joint = self.marginal(&vars)?;
        let cond = self.marginal(given)?;
        Ok(entropy_nats(joint.probs.iter().copied()) - entropy_nats(cond.probs.iter().copied()))
    }

    /// Expected KL between the label posterior given all observed features
    /// and given the features left after dropping `removed`.
    pub fn removal_divergence(&self, removed: &[VarId], direction: RemovalDirection) -> Result<f64> {
        check_disjoint(self, &[removed])?;
        let y = self.label();
        if removed.contains(&y) {
            return Err(Error::LabelNotAllowed);
        }
        let full = self.observed_features();
        let remaining: Vec<VarId> = full.iter().copied().filter(|v| !removed.contains(v)).collect();

        let mut full_y = full.clone();
        full_y.push(y);
        let mut rem_y = remaining.clone();
        rem_y.push(y);
        let joint_full = self.marginal(&full_y)?;
        let joint_rem = self.marginal(&rem_y)?;
        let p_full = self.marginal(&full)?;
        let p_rem = self.marginal(&remaining)?;
        let rem_pos: Vec<usize> = remaining
            .iter()
            .map(|v| full.iter().position(|f| f == v).unwrap())
            .collect();
        let card_y = self.variable(y).cardinality;

        let mut total = 0.0;
        for (i, &px) in p_full.probs.iter().enumerate() {
            if px <= 0.0 {
                continue;
            }
            let x = p_full.decode(i);
            let r: Vec<usize> = rem_pos.iter().map(|&j| x[j]).collect();
            let pr = p_rem.get(&r);
            let mut kl = 0.0;
            let mut key_f = x.clone();
            key_f.push(0);
            let mut key_r = r.clone();
            key_r.push(0);
            for yv in 0..card_y {
                *key_f.last_mut().unwrap() = yv;
                *key_r.last_mut().unwrap() = yv;
                let pf = joint_full.get(&key_f) / px;
                let pm = joint_rem.get(&key_r) / pr;
                let (p, q) = match direction {
                    RemovalDirection::FullVsRemaining => (pf, pm),
                    RemovalDirection::RemainingVsFull => (pm, pf),
                };
                if p > 0.0 {
                    kl += if q > 0.0 { p * (p / q).ln() } else { f64::INFINITY };
                }
            }
            total += px * kl;
        }
        Ok(total.max(0.0))
    }

    /// Largest violation of `P(a, b | c) = P(a | c) P(b | c)` over all
    /// reachable `c`.
    pub fn independence_gap(&self, a: &[VarId], b: &[VarId], c: &[VarId]) -> Result<f64> {
        check_disjoint(self, &[a, b, c])?;
        let vars: Vec<VarId> = a.iter().chain(b).chain(c).copied().collect();
        let abc = self.marginal(&vars)?;
        let ac_vars: Vec<VarId> = a.iter().chain(c).copied().collect();
        let bc_vars: Vec<VarId> = b.iter().chain(c).copied().collect();
        let ac = self.marginal(&ac_vars)?;
        let bc = self.marginal(&bc_vars)?;
        let pc = self.marginal(c)?;
        let mut gap: f64 = 0.0;
        for i in 0..abc.probs.len() {
            let values = abc.decode(i);
            let (va, rest) = values.split_at(a.len());
            let (vb, vc) = rest.split_at(b.len());
            let p_c = pc.get(vc);
            if p_c <= 0.0 {
                continue;
            }
            let key_ac: Vec<usize> = va.iter().chain(vc).copied().collect();
            let key_bc: Vec<usize> = vb.iter().chain(vc).copied().collect();
            let lhs = abc.probs[i] / p_c;
            let rhs = (ac.get(&key_ac) / p_c) * (bc.get(&key_bc) / p_c);
            gap = gap.max((lhs - rhs).abs());
        }
        Ok(gap)
    }

    /// Enumeration-based test of `a ⫫ b | c` at tolerance `tol`.
    pub fn conditionally_independent(&self, a: &[VarId], b: &[VarId], c: &[VarId], tol: f64) -> Result<bool> {
        Ok(self.independence_gap(a, b, c)? <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> CausalSpec {
        CausalSpec::toy()
    }

    fn hb_bits(p: f64) -> f64 {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    #[test]
    fn joint_probability_factors() {
        let s = toy();
        let a = Assignment::from_names(&s, &[("U", 1), ("X_T", 1), ("X_A", 1), ("Y", 1), ("N", 1)]).unwrap();
        // p(N=1) = 0.5 multiplies the four-variable product 0.3645.
        assert!((s.joint_probability(&a).unwrap() - 0.3645 * 0.5).abs() < 1e-15);
        let total: f64 = s.joint_table().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_probability_errors() {
        let s = toy();
        let partial = Assignment::from_names(&s, &[("U", 1)]).unwrap();
        assert!(matches!(s.joint_probability(&partial), Err(Error::MissingVariable(_))));
        let bad = Assignment::from_names(&s, &[("U", 2), ("X_T", 1), ("X_A", 1), ("Y", 1), ("N", 0)]).unwrap();
        assert!(matches!(s.joint_probability(&bad), Err(Error::ValueOutOfRange { .. })));
    }

    #[test]
    fn zero_factor_annihilates() {
        use crate::causal::{Role, VariableDef};
        let s = CausalSpec::new(vec![
            VariableDef::new("A", Role::Causal, &[], vec![vec![1.0, 0.0]]),
            VariableDef::new("Y", Role::Label, &["A"], vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
        ])
        .unwrap();
        let a = Assignment::from_names(&s, &[("A", 1), ("Y", 0)]).unwrap();
        assert_eq!(s.joint_probability(&a).unwrap(), 0.0);
        let given = Assignment::from_names(&s, &[("A", 1)]).unwrap();
        assert!(matches!(
            s.conditional_distribution(s.label(), &given),
            Err(Error::DegenerateEvidence)
        ));
    }

    #[test]
    fn toy_conditionals() {
        let s = toy();
        let y = s.label();
        let xa = s.var("X_A").unwrap();
        let xt = s.var("X_T").unwrap();
        let p = s.conditional_distribution(y, &Assignment::new()).unwrap();
        assert!((p.prob(1) - 0.5).abs() < 1e-12);
        let p = s.conditional_distribution(xa, &Assignment::new().with(xt, 1)).unwrap();
        assert!((p.prob(1) - 0.82).abs() < 1e-12);
        let p = s.conditional_distribution(y, &Assignment::new().with(xt, 1)).unwrap();
        assert!((p.prob(1) - 0.756).abs() < 1e-12);
        assert!(matches!(
            s.conditional_distribution(y, &Assignment::new().with(y, 1)),
            Err(Error::OverlappingSets(_))
        ));
    }

    #[test]
    fn toy_mutual_information() {
        let s = toy();
        let y = [s.label()];
        let mi_a = s.mutual_information(&y, &s.vars(&["X_A"]).unwrap()).unwrap();
        assert!((mi_a - (1.0 - hb_bits(0.9))).abs() < 1e-12);
        assert!((mi_a - 0.531).abs() < 1e-3);
        let mi_t = s.mutual_information(&y, &s.vars(&["X_T"]).unwrap()).unwrap();
        assert!((mi_t - (1.0 - hb_bits(0.756))).abs() < 1e-12);
        assert!((mi_t - 0.198).abs() < 1e-3);
        let mi_n = s.mutual_information(&y, &s.vars(&["N"]).unwrap()).unwrap();
        assert!(mi_n.abs() < 1e-12);
        assert!(s.mutual_information(&y, &y).is_err());
    }

    #[test]
    fn toy_removal_divergence() {
        let s = toy();
        for dir in [RemovalDirection::FullVsRemaining, RemovalDirection::RemainingVsFull] {
            assert!(s.removal_divergence(&s.vars(&["X_T"]).unwrap(), dir).unwrap() < 1e-12);
            assert!(s.removal_divergence(&s.vars(&["N"]).unwrap(), dir).unwrap() < 1e-12);
            assert!(s.removal_divergence(&s.vars(&["X_A"]).unwrap(), dir).unwrap() > 1e-3);
        }
        assert!(matches!(
            s.removal_divergence(&[s.label()], RemovalDirection::FullVsRemaining),
            Err(Error::LabelNotAllowed)
        ));
    }

    #[test]
    fn full_vs_remaining_equals_conditional_mi() {
        // E_X KL(P(Y|X) || P(Y|X_-W)) = I(Y; W | X_-W)
        let s = toy();
        let xa = s.var("X_A").unwrap();
        let rest = s.vars(&["X_T", "N"]).unwrap();
        let y = s.label();
        let cmi = s.conditional_entropy(y, &rest).unwrap()
            - s.conditional_entropy(y, &[xa, rest[0], rest[1]]).unwrap();
        let kl = s.removal_divergence(&[xa], RemovalDirection::FullVsRemaining).unwrap();
        assert!((kl - cmi).abs() < 1e-12);
    }
}
