//! Named parameter storage, partitioned into network weights and
//! architecture parameters so each optimizer can only touch its own set.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum Partition {
    /// Network weights (the phi set).
    Weight,
    /// Architecture parameters and edge-normalization coefficients (alpha).
    Arch,
}

impl Partition {
    pub fn tag(&self) -> u8 {
        match self {
            Partition::Weight => 0,
            Partition::Arch => 1,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Partition::Weight),
            1 => Ok(Partition::Arch),
            _ => Err(Error::Corrupt(format!("unknown partition tag {t}"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct BufferId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<E: Elem> {
    pub name: String,
    pub value: Tensor<E>,
    pub partition: Partition,
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct BufferEntry<E: Elem> {
    pub name: String,
    pub value: Tensor<E>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Elem> {
    params: Vec<ParamEntry<E>>,
    buffers: Vec<BufferEntry<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add_param(
        &mut self,
        name: impl Into<String>,
        value: Tensor<E>,
        partition: Partition,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(ParamEntry {
            name,
            value,
            partition,
        });
        Ok(id)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<E>) -> BufferId {
        let id = BufferId(self.buffers.len());
        self.buffers.push(BufferEntry {
            name: name.into(),
            value,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<E> {
        &self.params[id.0]
    }

    pub fn partition_of(&self, id: ParamId) -> Partition {
        self.params[id.0].partition
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<E> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<E> {
        &mut self.buffers[id.0].value
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<E>)> {
        self.params.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (BufferId, &BufferEntry<E>)> {
        self.buffers
            .iter()
            .enumerate()
            .map(|(i, e)| (BufferId(i), e))
    }

    pub fn ids_in(&self, partition: Partition) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, e)| e.partition == partition)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Total scalar count in one partition.
    pub fn scalar_count(&self, partition: Partition) -> usize {
        self.params
            .iter()
            .filter(|e| e.partition == partition)
            .map(|e| e.value.numel())
            .sum()
    }
}

/// Gradients keyed by parameter id; parameters never touched by the loss are
/// simply absent and read back as zero.
#[derive(Debug, Default)]
pub struct ParamGrads<E: Elem> {
    map: HashMap<ParamId, Tensor<E>>,
}

impl<E: Elem> ParamGrads<E> {
    pub fn new() -> Self {
        ParamGrads {
            map: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor<E>) {
        self.map.insert(id, g);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.map.get(&id)
    }

    /// Gradient for `id`, materializing zeros for unreached parameters.
    pub fn get_or_zero(&self, id: ParamId, store: &ParamStore<E>) -> Tensor<E> {
        self.map
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn accumulate(&mut self, other: ParamGrads<E>) -> Result<()> {
        for (id, g) in other.map {
            match self.map.get_mut(&id) {
                Some(existing) => existing.add_assign(&g)?,
                None => {
                    self.map.insert(id, g);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_param("a/w", Tensor::zeros(Shape5::scalar()), Partition::Weight)
            .unwrap();
        assert!(s
            .add_param("a/w", Tensor::zeros(Shape5::scalar()), Partition::Arch)
            .is_err());
    }

    #[test]
    fn partitions_are_disjoint() {
        let mut s = ParamStore::<f32>::new();
        let w = s
            .add_param("w", Tensor::zeros(Shape5::vector(3)), Partition::Weight)
            .unwrap();
        let a = s
            .add_param("alpha", Tensor::zeros(Shape5::vector(7)), Partition::Arch)
            .unwrap();
        assert_eq!(s.ids_in(Partition::Weight), vec![w]);
        assert_eq!(s.ids_in(Partition::Arch), vec![a]);
        assert_eq!(s.scalar_count(Partition::Arch), 7);
    }
}
