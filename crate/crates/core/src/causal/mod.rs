//! Declarative discrete Bayes nets with exact enumeration inference.

mod dsep;
mod inference;
mod spec;

pub use inference::{Marginal, RemovalDirection};
pub use spec::{
    Assignment, CausalSpec, Role, VarId, Variable, VariableDef, DEFAULT_ENUMERATION_CAP, TOY_SPEC,
};
