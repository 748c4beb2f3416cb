use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Array;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable arrays with a stable registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn register(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Xavier-uniform matrix.
    pub fn xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite xavier bound");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.register(name, Array::from_vec(rows, cols, data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.register(name, Array::zeros(rows, cols))
    }

    /// Embedding table with entries drawn from N(0, 1/width).
    pub fn embedding(&mut self, name: impl Into<String>, rows: usize, width: usize, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, (1.0 / width as f64).sqrt()).expect("positive std");
        let data = (0..rows * width).map(|_| dist.sample(rng)).collect();
        self.register(name, Array::from_vec(rows, width, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn expect_id(&self, name: &str) -> ParamId {
        self.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.id(name).map(|id| self.get(id))
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

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Array>>,
}

impl Grads {
    pub fn new(len: usize) -> Self {
        Self { slots: vec![None; len] }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Array) {
        match &mut self.slots[id.0] {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array> {
        self.slots[id.0].as_ref()
    }

    /// Gradient for `id`, zero-filled when the parameter was unreachable.
    pub fn dense(&self, id: ParamId, store: &ParamStore) -> Array {
        match &self.slots[id.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = store.get(id).shape();
                Array::zeros(r, c)
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots.iter().flatten().map(Array::sq_norm).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_reached(&self, id: ParamId) -> bool {
        self.slots[id.0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registration_order_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.xavier("b", 2, 2, &mut rng);
        s.zeros("a", 1, 3);
        let names: Vec<_> = s.iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(s.numel(), 7);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.zeros("w", 1, 1);
        s.zeros("w", 1, 1);
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let id = s.xavier("w", 10, 30, &mut rng);
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(s.get(id).data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = Grads::new(2);
        g.accumulate(ParamId(0), &Array::row_vector(vec![3.0, 0.0]));
        g.accumulate(ParamId(1), &Array::row_vector(vec![0.0, 4.0]));
        let before = g.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
