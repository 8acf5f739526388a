use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// All values flattened in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Overwrites every value from a flat slice in declaration order.
    pub fn load_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::Usage(format!("expected {} parameter values, got {}", self.numel(), values.len())));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Puts every parameter on the tape, as gradient leaves or as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
    }
}

/// Declares parameters and draws their initial values.
pub(crate) struct ParamBuilder<'r, T> {
    store: ParamStore<T>,
    rng: &'r mut ChaCha8Rng,
}

impl<'r, T: Scalar> ParamBuilder<'r, T> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        ParamBuilder { store: ParamStore { names: Vec::new(), tensors: Vec::new() }, rng }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| T::of(self.rng.random_range(-bound..bound))).collect()
            }
        };
        self.store.names.push(name.into());
        self.store.tensors.push(Tensor::new(shape, data).expect("declared shapes are valid"));
        ParamId(self.store.len() - 1)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
