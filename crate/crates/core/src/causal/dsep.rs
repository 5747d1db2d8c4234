//! Graphical d-separation via the reachability ("Bayes ball") traversal.
//!
//! A trail is blocked at a chain or fork node that is observed, or at a
//! collider that has neither itself nor a descendant observed.

use std::collections::HashSet;

use super::spec::{CausalSpec, VarId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Via {
    /// Entered from a child, travelling against the edge.
    Up,
    /// Entered from a parent, travelling along the edge.
    Down,
}

impl CausalSpec {
    /// Whether every trail between `a` and `b` is blocked given `c`.
    pub fn d_separated(&self, a: &[VarId], b: &[VarId], c: &[VarId]) -> Result<bool> {
        let mut seen = HashSet::new();
        for &v in a.iter().chain(b).chain(c) {
            if v.0 >= self.len() {
                return Err(Error::UnknownVariable(format!("#{}", v.0)));
            }
            if !seen.insert(v) {
                return Err(Error::OverlappingSets(self.name(v).to_string()));
            }
        }
        let reachable = self.reachable(a, c);
        Ok(b.iter().all(|v| !reachable.contains(v)))
    }

    /// Nodes reachable from `sources` by an active trail given `observed`.
    fn reachable(&self, sources: &[VarId], observed: &[VarId]) -> HashSet<VarId> {
        let observed: HashSet<VarId> = observed.iter().copied().collect();
        let children: Vec<Vec<VarId>> = (0..self.len()).map(|i| self.children(VarId(i))).collect();

        // Observed nodes and their ancestors activate colliders.
        let mut activating = HashSet::new();
        let mut stack: Vec<VarId> = observed.iter().copied().collect();
        while let Some(v) = stack.pop() {
            if activating.insert(v) {
                stack.extend(self.variable(v).parents.iter().copied());
            }
        }

        let mut frontier: Vec<(VarId, Via)> = sources.iter().map(|&s| (s, Via::Up)).collect();
        let mut visited = HashSet::new();
        let mut reachable = HashSet::new();
        while let Some((node, via)) = frontier.pop() {
            if !visited.insert((node, via)) {
                continue;
            }
            let is_observed = observed.contains(&node);
            if !is_observed {
                reachable.insert(node);
            }
            match via {
                Via::Up if !is_observed => {
                    frontier.extend(self.variable(node).parents.iter().map(|&p| (p, Via::Up)));
                    frontier.extend(children[node.0].iter().map(|&ch| (ch, Via::Down)));
                }
                Via::Up => {}
                Via::Down => {
                    if !is_observed {
                        frontier.extend(children[node.0].iter().map(|&ch| (ch, Via::Down)));
                    }
                    if activating.contains(&node) {
                        frontier.extend(self.variable(node).parents.iter().map(|&p| (p, Via::Up)));
                    }
                }
            }
        }
        reachable
    }
}

#[cfg(test)]
mod tests {
    use crate::causal::{CausalSpec, Role, VariableDef};

    #[test]
    fn toy_backdoor() {
        let s = CausalSpec::toy();
        let v = |n| s.vars(&[n]).unwrap();
        assert!(s.d_separated(&v("X_T"), &v("Y"), &v("X_A")).unwrap());
        assert!(!s.d_separated(&v("X_T"), &v("Y"), &[]).unwrap());
        assert!(s.d_separated(&v("X_T"), &v("Y"), &v("U")).unwrap());
        assert!(s.d_separated(&v("N"), &v("Y"), &[]).unwrap());
        assert!(s.d_separated(&v("X_T"), &v("Y"), &v("Y")).is_err());
    }

    #[test]
    fn disconnected_pair() {
        let s = CausalSpec::new(vec![
            VariableDef::new("A", Role::Noise, &[], vec![vec![0.3, 0.7]]),
            VariableDef::new("Y", Role::Label, &[], vec![vec![0.5, 0.5]]),
        ])
        .unwrap();
        assert!(s.d_separated(&s.vars(&["A"]).unwrap(), &[s.label()], &[]).unwrap());
    }

    #[test]
    fn collider_and_descendant() {
        // A -> C <- B, C -> D
        let half = vec![vec![0.5, 0.5]];
        let two = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let four = vec![vec![0.9, 0.1], vec![0.4, 0.6], vec![0.3, 0.7], vec![0.1, 0.9]];
        let s = CausalSpec::new(vec![
            VariableDef::new("A", Role::Causal, &[], half.clone()),
            VariableDef::new("B", Role::Noise, &[], half),
            VariableDef::new("Y", Role::Label, &["A", "B"], four),
            VariableDef::new("D", Role::Spurious, &["Y"], two),
        ])
        .unwrap();
        let v = |n| s.vars(&[n]).unwrap();
        assert!(s.d_separated(&v("A"), &v("B"), &[]).unwrap());
        assert!(!s.d_separated(&v("A"), &v("B"), &v("Y")).unwrap());
        assert!(!s.d_separated(&v("A"), &v("B"), &v("D")).unwrap());
    }
}
