//! Named trainable parameters.

use rand_distr::{Distribution, StandardNormal};

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Owns every parameter of a model in creation order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    seed: u64,
    params: Vec<Param<T>>,
}

/// He-scaled normal draw: `N(0, 2 / fan_in)`, a pure function of `(seed, shape)`.
pub fn he_normal<T: Scalar>(seed: u64, shape: Shape, fan_in: usize) -> Tensor<T> {
    let mut rng = rng_for(seed, 0);
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

impl<T: Scalar> ParamStore<T> {
    /// Empty store whose initializers derive from `seed`.
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, params: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a He-initialized parameter; its stream is the parameter's index.
    pub fn add_he(&mut self, name: impl Into<String>, shape: Shape, fan_in: usize) -> ParamId {
        let seed = crate::rng::derive_seed(self.seed, self.params.len() as u64);
        self.add(name, he_normal(seed, shape, fan_in))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Shape) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().numel()).sum()
    }

    /// Accumulates every parameter gradient of a backward pass into the
    /// parameters' gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in grads.params() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::usage(format!("gradient for unknown parameter #{}", id.0)))?;
            p.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }
}
