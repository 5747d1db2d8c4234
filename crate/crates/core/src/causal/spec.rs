use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of joint states enumerated by the oracle.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

const ROW_TOLERANCE: f64 = 1e-6;

/// The bundled backdoor toy network (confounder, spurious taste, causal
/// appearance, label, isolated noise).
pub const TOY_SPEC: &str = include_str!("../../fixtures/toy.spec");

/// Semantic role of a variable in the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Label,
    Causal,
    Spurious,
    Noise,
    Confounder,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Label => "label",
            Role::Causal => "causal",
            Role::Spurious => "spurious",
            Role::Noise => "noise",
            Role::Confounder => "confounder",
        }
    }

    /// Roles rendered into the observed input `X`.
    pub fn is_observed_feature(self) -> bool {
        matches!(self, Role::Causal | Role::Spurious | Role::Noise)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index of a variable inside a [`CausalSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

/// One discrete variable with its conditional probability table.
///
/// `cpt` has one row per parent configuration, enumerated in mixed radix
/// with the first parent most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
    pub parents: Vec<VarId>,
    pub cpt: Vec<Vec<f64>>,
    pub role: Role,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableFile {
    name: String,
    role: Role,
    #[serde(default = "default_cardinality")]
    cardinality: usize,
    #[serde(default)]
    parents: Vec<String>,
    cpt: Vec<Vec<f64>>,
}

fn default_cardinality() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    enumeration_cap: Option<u64>,
    variables: Vec<VariableFile>,
}

/// A small discrete Bayes net with role-tagged variables.
#[derive(Debug, Clone)]
pub struct CausalSpec {
    variables: Vec<Variable>,
    index: HashMap<String, VarId>,
    topo_order: Vec<VarId>,
    label: VarId,
    enumeration_cap: u64,
    joint: OnceLock<Vec<f64>>,
}

/// Builder-friendly description of a variable used by [`CausalSpec::new`].
#[derive(Debug, Clone)]
pub struct VariableDef {
    pub name: String,
    pub role: Role,
    pub cardinality: usize,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<f64>>,
}

impl VariableDef {
    pub fn new(name: &str, role: Role, parents: &[&str], cpt: Vec<Vec<f64>>) -> Self {
        let cardinality = cpt.first().map_or(2, Vec::len);
        Self {
            name: name.to_string(),
            role,
            cardinality,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            cpt,
        }
    }
}

impl CausalSpec {
    pub fn new(defs: Vec<VariableDef>) -> Result<Self> {
        Self::with_cap(defs, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(defs: Vec<VariableDef>, enumeration_cap: u64) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, d) in defs.iter().enumerate() {
            if d.name.is_empty() {
                return Err(Error::InvalidSpec("variable with empty name".into()));
            }
            if index.insert(d.name.clone(), VarId(i)).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate variable `{}`", d.name)));
            }
        }

        let mut variables = Vec::with_capacity(defs.len());
        for d in &defs {
            if d.cardinality < 1 {
                return Err(Error::InvalidSpec(format!("`{}` has cardinality 0", d.name)));
            }
            let mut parents = Vec::with_capacity(d.parents.len());
            for p in &d.parents {
                let id = *index.get(p).ok_or_else(|| {
                    Error::InvalidSpec(format!("`{}` lists unknown parent `{p}`", d.name))
                })?;
                if parents.contains(&id) {
                    return Err(Error::InvalidSpec(format!("`{}` lists parent `{p}` twice", d.name)));
                }
                parents.push(id);
            }
            variables.push(Variable {
                name: d.name.clone(),
                cardinality: d.cardinality,
                parents,
                cpt: d.cpt.clone(),
                role: d.role,
            });
        }

        // CPT shapes need parent cardinalities, so check them in a second pass.
        for i in 0..variables.len() {
            let rows: usize = variables[i]
                .parents
                .iter()
                .map(|p| variables[p.0].cardinality)
                .product();
            let v = &mut variables[i];
            if v.cpt.len() != rows {
                return Err(Error::InvalidSpec(format!(
                    "`{}` needs {rows} CPT rows, found {}",
                    v.name,
                    v.cpt.len()
                )));
            }
            for (r, row) in v.cpt.iter_mut().enumerate() {
                if row.len() != v.cardinality {
                    return Err(Error::InvalidSpec(format!(
                        "`{}` CPT row {r} has {} entries, expected {}",
                        v.name,
                        row.len(),
                        v.cardinality
                    )));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "`{}` CPT row {r} has a negative or non-finite entry",
                        v.name
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::InvalidSpec(format!(
                        "`{}` CPT row {r} sums to {sum}",
                        v.name
                    )));
                }
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }

        let labels: Vec<usize> = variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == Role::Label)
            .map(|(i, _)| i)
            .collect();
        if labels.len() != 1 {
            return Err(Error::InvalidSpec(format!(
                "expected exactly one label variable, found {}",
                labels.len()
            )));
        }

        let topo_order = topological_order(&variables)?;
        let spec = Self {
            variables,
            index,
            topo_order,
            label: VarId(labels[0]),
            enumeration_cap,
            joint: OnceLock::new(),
        };
        let states = spec.state_count();
        if states > enumeration_cap as u128 {
            return Err(Error::EnumerationCap {
                states,
                cap: enumeration_cap,
            });
        }
        Ok(spec)
    }

    /// Parses the structured-text (TOML) spec format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text)?;
        let defs = file
            .variables
            .into_iter()
            .map(|v| VariableDef {
                name: v.name,
                role: v.role,
                cardinality: v.cardinality,
                parents: v.parents,
                cpt: v.cpt,
            })
            .collect();
        Self::with_cap(defs, file.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Serializes back to the TOML spec format.
    pub fn to_toml_string(&self) -> String {
        let file = SpecFile {
            enumeration_cap: Some(self.enumeration_cap),
            variables: self
                .variables
                .iter()
                .map(|v| VariableFile {
                    name: v.name.clone(),
                    role: v.role,
                    cardinality: v.cardinality,
                    parents: v.parents.iter().map(|p| self.variables[p.0].name.clone()).collect(),
                    cpt: v.cpt.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("spec serialization cannot fail")
    }

    /// The bundled backdoor toy network.
    pub fn toy() -> Self {
        Self::from_toml_str(TOY_SPEC).expect("bundled toy spec is valid")
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn var(&self, name: &str) -> Result<VarId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn vars(&self, names: &[&str]) -> Result<Vec<VarId>> {
        names.iter().map(|n| self.var(n)).collect()
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.variables[id.0].name
    }

    pub fn label(&self) -> VarId {
        self.label
    }

    pub fn role(&self, id: VarId) -> Role {
        self.variables[id.0].role
    }

    pub fn with_role(&self, role: Role) -> Vec<VarId> {
        (0..self.variables.len())
            .map(VarId)
            .filter(|&id| self.role(id) == role)
            .collect()
    }

    /// Variables rendered into the observed input (causal, spurious, noise).
    pub fn observed_features(&self) -> Vec<VarId> {
        (0..self.variables.len())
            .map(VarId)
            .filter(|&id| self.role(id).is_observed_feature())
            .collect()
    }

    pub fn topological_order(&self) -> &[VarId] {
        &self.topo_order
    }

    pub fn children(&self, id: VarId) -> Vec<VarId> {
        (0..self.variables.len())
            .map(VarId)
            .filter(|c| self.variables[c.0].parents.contains(&id))
            .collect()
    }

    pub fn enumeration_cap(&self) -> u64 {
        self.enumeration_cap
    }

    pub fn state_count(&self) -> u128 {
        self.variables
            .iter()
            .map(|v| v.cardinality as u128)
            .fold(1u128, |acc, c| acc.saturating_mul(c))
    }

    /// Index of the CPT row selected by the parents' values in `values`.
    pub(crate) fn cpt_row(&self, id: VarId, values: &[usize]) -> usize {
        self.variables[id.0]
            .parents
            .iter()
            .fold(0, |row, p| row * self.variables[p.0].cardinality + values[p.0])
    }

    pub(crate) fn joint_cache(&self) -> &OnceLock<Vec<f64>> {
        &self.joint
    }

    /// Returns a copy with every CPT of `id` replaced.
    pub fn with_cpt(&self, id: VarId, cpt: Vec<Vec<f64>>) -> Result<Self> {
        let defs = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| VariableDef {
                name: v.name.clone(),
                role: v.role,
                cardinality: v.cardinality,
                parents: v.parents.iter().map(|p| self.variables[p.0].name.clone()).collect(),
                cpt: if i == id.0 { cpt.clone() } else { v.cpt.clone() },
            })
            .collect();
        Self::with_cap(defs, self.enumeration_cap)
    }

    /// Sets the strength of every binary child of a binary confounder to
    /// `p(child = u | U = u) = strength`.
    pub fn with_spurious_strength(&self, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::InvalidSpec(format!("spurious strength {strength} outside [0, 1]")));
        }
        let mut spec = self.clone();
        for u in self.with_role(Role::Confounder) {
            if self.variable(u).cardinality != 2 {
                continue;
            }
            for child in self.children(u) {
                let v = self.variable(child);
                if v.cardinality != 2 || v.parents.len() != 1 {
                    continue;
                }
                let cpt = vec![vec![strength, 1.0 - strength], vec![1.0 - strength, strength]];
                spec = spec.with_cpt(child, cpt)?;
            }
        }
        Ok(spec)
    }
}

fn topological_order(variables: &[Variable]) -> Result<Vec<VarId>> {
    let n = variables.len();
    let mut indegree: Vec<usize> = variables.iter().map(|v| v.parents.len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(VarId(i));
        for (c, v) in variables.iter().enumerate() {
            if v.parents.contains(&VarId(i)) {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidSpec("graph contains a cycle".into()));
    }
    Ok(order)
}

/// A possibly partial map from variables to value indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    values: Vec<(VarId, usize)>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an assignment from `(name, value)` pairs.
    pub fn from_names(spec: &CausalSpec, pairs: &[(&str, usize)]) -> Result<Self> {
        let mut a = Self::new();
        for &(name, value) in pairs {
            a.set(spec.var(name)?, value);
        }
        Ok(a)
    }

    pub fn set(&mut self, var: VarId, value: usize) {
        match self.values.iter_mut().find(|(v, _)| *v == var) {
            Some(slot) => slot.1 = value,
            None => self.values.push((var, value)),
        }
    }

    pub fn with(mut self, var: VarId, value: usize) -> Self {
        self.set(var, value);
        self
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.values.iter().find(|(v, _)| *v == var).map(|(_, x)| *x)
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.get(var).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, usize)> + '_ {
        self.values.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn validate(&self, spec: &CausalSpec) -> Result<()> {
        for (var, value) in self.iter() {
            if var.0 >= spec.len() {
                return Err(Error::UnknownVariable(format!("#{}", var.0)));
            }
            let v = spec.variable(var);
            if value >= v.cardinality {
                return Err(Error::ValueOutOfRange {
                    variable: v.name.clone(),
                    value,
                    cardinality: v.cardinality,
                });
            }
        }
        Ok(())
    }

    /// Dense value vector; errors if any variable is unassigned.
    pub(crate) fn dense(&self, spec: &CausalSpec) -> Result<Vec<usize>> {
        self.validate(spec)?;
        (0..spec.len())
            .map(|i| {
                self.get(VarId(i))
                    .ok_or_else(|| Error::MissingVariable(spec.name(VarId(i)).to_string()))
            })
            .collect()
    }
}
