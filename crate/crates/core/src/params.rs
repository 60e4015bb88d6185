use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle into a [`ParamSet`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One named tensor of model state. `trainable` entries receive gradients
/// and optimizer updates; the rest (batchnorm running statistics,
/// standardization constants) are carried state.
#[derive(Clone, Debug)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
    /// Whether weight decay applies (conv/linear weights only).
    pub decay: bool,
}

/// Ordered, named collection of model tensors. Registration order is the
/// canonical order for checkpoints, gradient norms and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<T>,
        trainable: bool,
        decay: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let tensor = if trainable {
            tensor.with_requires_grad()
        } else {
            tensor
        };
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
            decay,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Total scalar count across trainable entries whose name passes `filter`.
    pub fn count_trainable<F: Fn(&str) -> bool>(&self, filter: F) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && filter(&e.name))
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.iter_mut() {
            e.tensor.zero_grad();
        }
    }

    /// Bitwise equality of all entry names, shapes and values.
    pub fn state_eq(&self, other: &ParamSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|(a, b)| {
                a.name == b.name
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data().iter())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.register("w", Tensor::zeros(&[2]), true, true).unwrap();
        assert!(ps.register("w", Tensor::zeros(&[2]), true, true).is_err());
    }

    #[test]
    fn lookup_by_name() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.register("a.b", Tensor::zeros(&[3]), false, false).unwrap();
        assert_eq!(ps.id_of("a.b"), Some(id));
        assert_eq!(ps.id_of("missing"), None);
    }
}
