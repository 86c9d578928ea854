use crate::scalar::Scalar;

use super::{Gradients, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<S>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Replaces values by name. Every stored name must be present with a
    /// matching shape.
    pub fn load<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<S>)>,
    ) -> Result<(), LoadError> {
        let mut found = vec![false; self.len()];
        for (name, value) in entries {
            if let Some(idx) = self.names.iter().position(|n| n == name) {
                if self.values[idx].shape() != value.shape() {
                    return Err(LoadError::Shape {
                        name: name.to_string(),
                        expected: self.values[idx].shape().to_vec(),
                        found: value.shape().to_vec(),
                    });
                }
                self.values[idx] = value.clone();
                found[idx] = true;
            }
        }
        if let Some(idx) = found.iter().position(|f| !f) {
            return Err(LoadError::Missing(self.names[idx].clone()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LoadError {
    #[error("parameter {0:?} missing from checkpoint")]
    Missing(String),
    #[error("parameter {name:?}: expected shape {expected:?}, checkpoint has {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Tape handles for every parameter of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars already recorded in store order (e.g. by a gradient checker).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients aligned with the store's parameter order.
    pub fn gradients<S: Scalar>(&self, grads: &Gradients<S>) -> Vec<Tensor<S>> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}
