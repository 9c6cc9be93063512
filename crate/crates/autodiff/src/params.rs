use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`, `fan_in` being the first dimension.
    ScaledUniform,
    Normal { std: f64 },
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    names: Vec<String>,
    inits: Vec<Init>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            inits: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a new tensor drawn from `init`.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::ScaledUniform => {
                let fan_in = shape.first().copied().unwrap_or(1).max(1) as f64;
                let bound = 1.0 / fan_in.sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| F::of(dist.sample(rng))).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| AutodiffError::invalid("init", e.to_string()))?;
                (0..n).map(|_| F::of(dist.sample(rng))).collect()
            }
        };
        let id = self.insert(name, Tensor::new(shape.to_vec(), data)?)?;
        self.inits[id.0] = init;
        Ok(id)
    }

    /// Registers an existing tensor (used when loading checkpoints).
    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.inits.push(Init::Zeros);
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn init(&self, id: ParamId) -> Init {
        self.inits[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, values converted to another float width.
    pub fn cast<G: Float>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (i, t) in self.tensors.iter().enumerate() {
            let data = t.data().iter().map(|v| G::of(v.as_f64())).collect();
            let tensor = Tensor::new(t.shape().to_vec(), data).expect("same shape");
            let id = out.insert(&self.names[i], tensor).expect("unique names");
            out.inits[id.0] = self.inits[i];
        }
        out
    }
}

/// Gradients aligned with a [`ParamSet`]; `None` means the parameter was not reached.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> Gradients<F> {
    pub fn empty(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    pub(crate) fn add(&mut self, id: ParamId, grad: Tensor<F>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Adds another gradient set into this one (gradient accumulation).
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g.clone());
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<F>>)> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_ref()))
    }
}
