use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NnError;

/// Dense row-major 2-D array of f64. Vectors are 1 × n.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape(format!("{} values for shape {rows}x{cols}", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row(v: Vec<f64>) -> Self {
        Self { rows: 1, cols: v.len(), data: v }
    }

    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let n = Normal::new(0.0, std).expect("finite std");
        Self { rows, cols, data: (0..rows * cols).map(|_| n.sample(rng)).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, o: &Tensor) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named parameters plus AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: BTreeMap<String, ParamId>,
    pub(crate) values: Vec<Tensor>,
    pub(crate) m: Vec<Tensor>,
    pub(crate) v: Vec<Tensor>,
    pub(crate) step: u64,
    /// Bumped on every mutation; rollouts record it to detect stale snapshots.
    pub(crate) version: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            index: BTreeMap::new(),
            values: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
            version: 0,
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.m.push(Tensor::zeros(value.rows, value.cols));
        self.v.push(Tensor::zeros(value.rows, value.cols));
        self.values.push(value);
        self.version += 1;
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index.get(name).copied().ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Direct write access for finite-difference probes and tests.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.version += 1;
        &mut self.values[id.0]
    }

    /// Copies values (not optimizer state) of every parameter under `src` prefix into the matching
    /// name under `dst` prefix.
    pub fn copy_prefix(&mut self, from: &ParamStore, src: &str, dst: &str) -> Result<(), NnError> {
        for id in from.ids_with_prefix(src) {
            let name = format!("{dst}{}", &from.names[id.0][src.len()..]);
            let tid = self.id(&name)?;
            if self.values[tid.0].shape() != from.values[id.0].shape() {
                return Err(NnError::Shape(format!("{name}: shape mismatch on copy")));
            }
            self.values[tid.0] = from.values[id.0].clone();
        }
        self.version += 1;
        Ok(())
    }

    /// Resets optimizer moments and step count.
    pub fn reset_optimizer(&mut self) {
        for (m, v) in self.m.iter_mut().zip(self.v.iter_mut()) {
            m.data.iter_mut().for_each(|x| *x = 0.0);
            v.data.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
    }

    /// True when parameter values are bit-identical.
    pub fn values_equal(&self, o: &ParamStore) -> bool {
        self.names == o.names
            && self.values.iter().zip(&o.values).all(|(a, b)| {
                a.shape() == b.shape() && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Gradients keyed by parameter; absent entries received no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub(crate) g: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn empty(n: usize) -> Self {
        Self { g: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.g.get(id.0).and_then(|x| x.as_ref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, t: &Tensor) {
        if self.g.len() <= id.0 {
            self.g.resize(id.0 + 1, None);
        }
        match &mut self.g[id.0] {
            Some(acc) => acc.add_assign(t),
            slot @ None => *slot = Some(t.clone()),
        }
    }

    /// Sums `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, t) in other.g.iter().enumerate() {
            if let Some(t) = t {
                self.accumulate(ParamId(i), t);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.g.iter_mut().flatten() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.g.iter().all(Option::is_none)
    }

    pub fn global_norm(&self) -> f64 {
        self.g.iter().flatten().flat_map(|t| t.data.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Scales gradients down so their global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn all_zero(&self) -> bool {
        self.g.iter().flatten().all(|t| t.data.iter().all(|x| *x == 0.0))
    }
}
