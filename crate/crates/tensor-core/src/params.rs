use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`]. Stable for the lifetime of
/// the set; models keep these as struct fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn from_index(idx: usize) -> Self {
        ParamId(idx)
    }

    /// Position inside the owning set; indexes the vector returned by
    /// [`ParamSet::leaf_all`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, name-unique collection of trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    /// Replaces every tensor from `(name, tensor)` pairs; names must cover
    /// the set exactly. Used when loading checkpoints.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            let Some(i) = self.names.iter().position(|n| n == name) else {
                return Err(TensorError::contract(format!("unknown parameter {name}")));
            };
            if self.tensors[i].shape() != tensor.shape() {
                return Err(TensorError::shape(
                    "param load",
                    format!(
                        "{name}: {:?} vs {:?}",
                        self.tensors[i].shape(),
                        tensor.shape()
                    ),
                ));
            }
            self.tensors[i] = tensor.clone().with_grad();
        }
        Ok(())
    }

    /// Inserts every parameter as a grad-tracked leaf; the returned vector
    /// is indexed by [`ParamId`].
    pub fn leaf_all<R: Real>(&self, tape: &mut Tape<R>) -> Result<Vec<NodeId>> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Inference-mode variant: leaves are recorded without gradient
    /// tracking, so forward passes skip all backward bookkeeping.
    pub fn leaf_all_frozen<R: Real>(&self, tape: &mut Tape<R>) -> Result<Vec<NodeId>> {
        self.tensors.iter().map(|t| tape.leaf_frozen(t)).collect()
    }

    /// Collects leaf gradients into a [`GradientMap`]. Parameters that were
    /// not reached by the loss get zero gradients of the right shape.
    pub fn gradient_map<R: Real>(
        &self,
        ids: &[NodeId],
        grads: &Gradients<R>,
    ) -> Result<GradientMap> {
        if ids.len() != self.tensors.len() {
            return Err(TensorError::contract(
                "node id list does not match parameter set".to_string(),
            ));
        }
        let mut entries = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            let shape = self.tensors[i].shape().to_vec();
            let tensor = match grads.get(id) {
                Some(g) => {
                    let data: Vec<f32> = g.iter().map(|v| v.to_f32()).collect();
                    Tensor::new(shape, data)
                        .map_err(|_| TensorError::NonFinite("gradient"))?
                }
                None => Tensor::zeros(shape),
            };
            entries.push((self.names[i].clone(), tensor));
        }
        Ok(GradientMap { entries })
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter-name → gradient tensor mapping. Entry order matches the
/// originating [`ParamSet`], and every entry's shape matches its parameter.
#[derive(Clone, Debug)]
pub struct GradientMap {
    entries: Vec<(String, Tensor)>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn entry(&self, idx: usize) -> (&str, &Tensor) {
        let (n, t) = &self.entries[idx];
        (n.as_str(), t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_map_zero_fills_unreachable() {
        let mut set = ParamSet::new();
        let a = set.add("a", Tensor::full(vec![2], 1.0));
        let b = set.add("b", Tensor::full(vec![3], 2.0));
        let mut tape: Tape<f64> = Tape::new();
        let ids = set.leaf_all(&mut tape).unwrap();
        // Loss only touches `a`.
        let loss = tape.sum_all(ids[a.0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let map = set.gradient_map(&ids, &grads).unwrap();
        assert_eq!(map.get("a").unwrap().data(), &[1.0, 1.0]);
        assert_eq!(map.get("b").unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(map.get("b").unwrap().shape(), set.get(b).shape());
    }
}
