//! Parameter storage and the small building blocks shared by every stage.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn census(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Sum of every scalar parameter; a cheap fingerprint of the values.
    pub fn value_sum(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum).sum()
    }

    /// Records every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// Tape handles for a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Weight and bias of an affine map `x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        tape.linear(x, bind.var(self.weight), bind.var(self.bias))
    }
}

/// Gain and shift of a layer normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParams {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl NormParams {
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, bind.var(self.gain), bind.var(self.shift))
    }
}

/// Weight initializers. The generator is owned so initialization order
/// fully determines the parameter values.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("initializer shape")
    }

    /// He-uniform: `U(±sqrt(6 / fan_in))`.
    pub fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.uniform(shape, (6.0 / fan_in as f64).sqrt())
    }

    /// Xavier-uniform: `U(±sqrt(6 / (fan_in + fan_out)))`.
    pub fn xavier(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        self.uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// `U(±1/sqrt(width))`, used for aggregator queries.
    pub fn query(&mut self, shape: &[usize], width: usize) -> Tensor {
        self.uniform(shape, 1.0 / (width as f64).sqrt())
    }
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

pub fn ones(shape: &[usize]) -> Tensor {
    Tensor::filled(shape, 1.0)
}

/// Dropout state for one forward evaluation. Without a generator it is
/// the identity (evaluation mode).
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => tape.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}
