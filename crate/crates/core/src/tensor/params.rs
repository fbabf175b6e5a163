use std::collections::{BTreeSet, HashMap};

use super::Tensor;
use crate::error::{Error, Result};

/// Which entries of a parameter an optimizer may update.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Trainability {
    Frozen,
    Full,
    /// Only the listed rows (first-axis slices) are trainable.
    Rows(BTreeSet<usize>),
}

impl Trainability {
    pub fn is_trainable(&self) -> bool {
        !matches!(self, Trainability::Frozen)
    }

    /// Number of trainable scalars for a tensor of `shape`.
    pub fn count(&self, shape: &[usize]) -> usize {
        let numel: usize = shape.iter().product();
        match self {
            Trainability::Frozen => 0,
            Trainability::Full => numel,
            Trainability::Rows(rows) => {
                let row_len = if shape.len() <= 1 { 1 } else { numel / shape[0] };
                rows.len() * row_len
            }
        }
    }

    /// Flat indices of trainable entries.
    pub fn trainable_indices(&self, shape: &[usize]) -> Vec<usize> {
        let numel: usize = shape.iter().product();
        match self {
            Trainability::Frozen => Vec::new(),
            Trainability::Full => (0..numel).collect(),
            Trainability::Rows(rows) => {
                let row_len = if shape.len() <= 1 { 1 } else { numel / shape[0] };
                rows.iter().flat_map(|&r| r * row_len..(r + 1) * row_len).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: Trainability,
}

/// Insertion-ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            trainable: Trainability::Frozen,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn set_trainability(&mut self, name: &str, t: Trainability) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        p.tensor.set_requires_grad(t.is_trainable());
        p.trainable = t;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = Trainability::Frozen;
            p.tensor.set_requires_grad(false);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Drops a parameter, keeping the order of the rest.
    pub fn remove(&mut self, name: &str) -> Option<Parameter> {
        let i = self.index.remove(name)?;
        let p = self.params.remove(i);
        for (j, q) in self.params.iter().enumerate().skip(i) {
            self.index.insert(q.name.clone(), j);
        }
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_and_uniqueness() {
        let mut s = ParameterStore::new();
        s.insert("b", Tensor::zeros(&[2])).unwrap();
        s.insert("a", Tensor::zeros(&[3])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), ["b", "a"]);
        s.remove("b");
        s.insert("c", Tensor::zeros(&[1])).unwrap();
        assert_eq!(s.names().collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(s.tensor("c").unwrap().numel(), 1);
    }

    #[test]
    fn row_trainability_counts() {
        let rows = Trainability::Rows([1, 3].into_iter().collect());
        assert_eq!(rows.count(&[5, 4]), 8);
        assert_eq!(rows.count(&[5]), 2);
        assert_eq!(rows.trainable_indices(&[5, 2]), vec![2, 3, 6, 7]);
        assert_eq!(Trainability::Full.count(&[5, 4]), 20);
        assert_eq!(Trainability::Frozen.count(&[5, 4]), 0);
    }
}
