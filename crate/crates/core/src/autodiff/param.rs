use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named trainable tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Adds `other` into `self`, element by element.
    pub fn merge(&mut self, other: Gradients) {
        for (a, b) in self.per_param.iter_mut().zip(other.per_param) {
            let Some(b) = b else { continue };
            match a {
                Some(a) => a.iter_mut().zip(&b).for_each(|(x, y)| *x += y),
                None => *a = Some(b),
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Allocates (or resets) every gradient buffer to zero.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.data_mut().fill(0.0),
                None => p.grad = Some(Tensor::zeros(p.value.shape().to_vec())),
            }
        }
    }

    /// Adds `grads` into the stored gradients, allocating buffers as needed.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.per_param.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "gradients for {} parameters applied to a set of {}",
                grads.per_param.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.per_param) {
            let Some(g) = g else { continue };
            let buf = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape().to_vec()));
            for (a, b) in buf.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Plain SGD: `w <- w - lr * grad`, then zero the gradients.
    pub fn sgd_step(&mut self, lr: f32) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::Usage(format!(
                "parameter `{}` has no gradient; run backward first",
                p.name
            )));
        }
        for p in &mut self.params {
            let grad = p.grad.as_mut().expect("checked above");
            for (w, g) in p.value.data_mut().iter_mut().zip(grad.data_mut()) {
                *w -= lr * *g;
                *g = 0.0;
            }
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
