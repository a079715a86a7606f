use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Gradients, NnError, Tape, Tensor, Var};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, NnError> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(NnError::DuplicateParameter(name.into()));
        }
        self.params.push(Parameter { name: name.into(), tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a parameter drawn uniformly from `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId, NnError> {
        let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect() }
    }
}

/// Tape handles for a [`ParamSet`], valid for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Handles already on a tape, one per parameter in [`ParamSet`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient per parameter, in [`ParamSet`] order; unreached parameters get zeros.
    pub fn collect_grads(&self, tape: &Tape, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect()
    }
}
