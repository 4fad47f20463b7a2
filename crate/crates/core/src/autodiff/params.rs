use std::sync::atomic::{AtomicU64, Ordering};

use super::{AutodiffError, Graph, Real, Tensor};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Vec<T>,
}

/// Named trainable tensors of one network stage, with gradient accumulators.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<Entry<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    /// Clones get a fresh identity so graphs built from one never feed the other.
    fn clone(&self) -> Self {
        Self { uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed), entries: self.entries.clone() }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let grad = vec![T::zero(); value.numel()];
        self.entries.push(Entry { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.entries[id.0].grad
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the parameter gradients of the graph's last backward pass.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for (id, g) in graph.param_grads(self.uid) {
            for (dst, src) in self.entries[id.0].grad.iter_mut().zip(g) {
                *dst = *dst + *src;
            }
        }
    }

    /// Adds another store's gradients entry by entry (same layout required).
    pub fn accumulate_from(&mut self, other: &ParamStore<T>) {
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.grad.iter_mut().zip(&src.grad) {
                *d = *d + *s;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = *g * factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(T::of(max_norm / norm));
        }
        norm
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.add(e.name.clone(), e.value.cast()).expect("names already unique");
        }
        out
    }

    /// Copies values from `other`, matching entries by name and shape.
    pub fn load_values<U: Real>(&mut self, other: &ParamStore<U>) -> Result<(), AutodiffError> {
        for e in &mut self.entries {
            let id = other.find(&e.name).ok_or_else(|| AutodiffError::MissingParam(e.name.clone()))?;
            let src = other.value(id);
            if src.shape() != e.value.shape() {
                return Err(AutodiffError::ParamShape {
                    name: e.name.clone(),
                    expected: e.value.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            e.value = src.cast();
        }
        Ok(())
    }
}
