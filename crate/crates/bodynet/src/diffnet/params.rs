//! Named parameter storage shared by layers, the optimizer, and checkpoints.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::{DiffError, Result};

/// All learnable tensors and buffers of a model, keyed by a stable
/// dotted-path name. BTreeMap keeps iteration order sorted, which makes
/// optimizer sweeps and serialized checkpoints deterministic.
pub struct ParameterSet {
    pub schema_version: u32,
    map: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new(schema_version: u32) -> Self {
        ParameterSet { schema_version, map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(DiffError::DuplicateParam { name: name.to_string() });
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| DiffError::UnknownParam { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map.get_mut(name).ok_or_else(|| DiffError::UnknownParam { name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar values across learnable tensors (buffers excluded).
    pub fn num_learnable_values(&self) -> usize {
        self.map.values().filter(|t| t.requires_grad).map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn clear_grads(&mut self) {
        for t in self.map.values_mut() {
            t.grad = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_insert_rejected() {
        let mut p = ParameterSet::new(1);
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(
            p.insert("w", Tensor::zeros(vec![2])),
            Err(DiffError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn learnable_count_skips_buffers() {
        let mut p = ParameterSet::new(1);
        p.insert("w", Tensor::zeros(vec![4])).unwrap();
        p.insert("running_mean", Tensor::zeros(vec![4]).buffer()).unwrap();
        assert_eq!(p.num_learnable_values(), 4);
    }
}
