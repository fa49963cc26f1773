use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

/// A named parameter with its gradient buffer and Adam moments. Vectors are
/// stored as `1 x n` matrices; `shape` keeps the logical shape.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub(crate) m: Array2<T>,
    pub(crate) v: Array2<T>,
}

impl<T: Real> Parameter<T> {
    fn new(name: String, shape: Vec<usize>, value: Array2<T>) -> Self {
        let dim = value.raw_dim();
        Self {
            name,
            shape,
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            value,
        }
    }

    pub fn first_moment(&self) -> &Array2<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &Array2<T> {
        &self.v
    }
}

/// Ordered collection of named parameters plus optimizer state.
///
/// `version` changes whenever values are mutated through the store, which
/// lets backward passes detect tapes recorded against older values.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    pub(crate) step: u64,
    version: u64,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
            version: 0,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Array2<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DimensionMismatch(format!(
                "parameter '{name}' registered twice"
            )));
        }
        if value.len() != shape.iter().product::<usize>() {
            return Err(Error::DimensionMismatch(format!(
                "parameter '{name}' value does not match shape {shape:?}"
            )));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params
            .push(Parameter::new(name.to_string(), shape.to_vec(), value));
        self.version += 1;
        Ok(())
    }

    /// Adds a `rows x cols` matrix drawn from `U(-bound, bound)`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let value =
            Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-bound..=bound)));
        self.add(name, &[rows, cols], value)
    }

    pub fn add_vector(&mut self, name: &str, values: Vec<T>) -> Result<()> {
        let n = values.len();
        let value = Array2::from_shape_vec((1, n), values).expect("1 x n");
        self.add(name, &[n], value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>> {
        Ok(&self.params[self.index_of(name)?])
    }

    pub fn by_index(&self, i: usize) -> &Parameter<T> {
        &self.params[i]
    }

    pub(crate) fn by_index_mut(&mut self, i: usize) -> &mut Parameter<T> {
        &mut self.params[i]
    }

    /// Mutable access to a parameter value; bumps the version.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array2<T>> {
        let i = self.index_of(name)?;
        self.version += 1;
        Ok(&mut self.params[i].value)
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Array2<T>> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    pub fn values_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().all(|g| g.is_finite()))
    }

    /// Scales every gradient by `s`.
    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.mapv_inplace(|g| g * s);
        }
    }

    /// Copies values into another precision. Gradients and moments start at
    /// zero.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for p in &self.params {
            out.add(&p.name, &p.shape, p.value.mapv(|v| U::of(v.as_f64())))
                .expect("names are unique");
        }
        out
    }

    /// Copies values from `other`, matching by name; every parameter here
    /// must exist there with the same shape.
    pub fn load_values_from<U: Real>(&mut self, other: &ParameterStore<U>) -> Result<()> {
        for p in &mut self.params {
            let src = other.get(&p.name)?;
            if src.shape != p.shape {
                return Err(Error::DimensionMismatch(format!(
                    "parameter '{}' has shape {:?}, source {:?}",
                    p.name, p.shape, src.shape
                )));
            }
            p.value
                .zip_mut_with(&src.value, |d, s| *d = T::of(s.as_f64()));
        }
        self.version += 1;
        Ok(())
    }
}
