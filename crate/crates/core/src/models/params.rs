use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One entry of a flattened-parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Layout of a flat parameter vector: names, shapes and offsets in
/// canonical (creation) order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Total number of scalars described.
    pub fn len(&self) -> usize {
        self.entries
            .last()
            .map(|e| e.offset + e.shape.iter().product::<usize>())
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named, ordered trainable tensors with a tagged bottleneck subset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    bottleneck: Vec<usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its position. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, bottleneck: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push((name, tensor.with_requires_grad(true)));
        if bottleneck {
            self.bottleneck.push(id);
        }
        Ok(id)
    }

    /// Moves every entry of `other` in under `prefix.`, keeping tags.
    pub fn absorb(&mut self, prefix: &str, other: ParameterStore) -> Result<usize> {
        let offset = self.entries.len();
        let tagged: Vec<bool> = (0..other.entries.len())
            .map(|i| other.bottleneck.contains(&i))
            .collect();
        for ((name, tensor), is_bn) in other.entries.into_iter().zip(tagged) {
            self.insert(format!("{prefix}.{name}"), tensor, is_bn)?;
        }
        Ok(offset)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn by_index(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn bottleneck_names(&self) -> Vec<&str> {
        self.bottleneck.iter().map(|&i| self.entries[i].0.as_str()).collect()
    }

    pub fn is_bottleneck(&self, name: &str) -> bool {
        self.index.get(name).is_some_and(|i| self.bottleneck.contains(i))
    }

    /// Total scalar count.
    pub fn count_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn count_bottleneck(&self) -> usize {
        self.bottleneck.iter().map(|&i| self.entries[i].1.numel()).sum()
    }

    /// Scalar count of entries whose name starts with `prefix`.
    pub fn count_prefixed(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.clear_grad();
        }
    }

    /// Puts every parameter on `tape` as a leaf; `trainable` decides whether
    /// backward will produce gradients for them.
    pub fn bind(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| {
                let copy = Tensor::new(t.shape().to_vec(), t.data().to_vec())
                    .expect("stored tensor is well formed")
                    .with_requires_grad(trainable);
                tape.leaf(copy)
            })
            .collect()
    }

    /// Adds the gradients recorded on `tape` for the leaves made by [`bind`](Self::bind).
    pub fn accumulate_grads(&mut self, tape: &Tape<f32>, bound: &[Var]) {
        for ((_, t), &v) in self.entries.iter_mut().zip(bound) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    fn manifest_of(&self, ids: impl Iterator<Item = usize>) -> Manifest {
        let mut offset = 0;
        let entries = ids
            .map(|i| {
                let (name, t) = &self.entries[i];
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                e
            })
            .collect();
        Manifest { entries }
    }

    pub fn bottleneck_manifest(&self) -> Manifest {
        self.manifest_of(self.bottleneck.iter().copied())
    }

    pub fn full_manifest(&self) -> Manifest {
        self.manifest_of(0..self.entries.len())
    }

    /// Concatenates bottleneck tensors in canonical order.
    pub fn extract_bottleneck(&self) -> (Vec<f32>, Manifest) {
        let flat = self.flatten_ids(self.bottleneck.iter().copied());
        (flat, self.bottleneck_manifest())
    }

    /// Concatenates every parameter in store order.
    pub fn extract_all(&self) -> (Vec<f32>, Manifest) {
        (self.flatten_ids(0..self.entries.len()), self.full_manifest())
    }

    fn flatten_ids(&self, ids: impl Iterator<Item = usize>) -> Vec<f32> {
        let mut out = Vec::new();
        for i in ids {
            out.extend_from_slice(self.entries[i].1.data());
        }
        out
    }

    /// Overwrites the bottleneck entries from a flat vector. Nothing else is
    /// touched.
    pub fn inject_bottleneck(&mut self, flat: &[f32], manifest: &Manifest) -> Result<()> {
        let own = self.bottleneck_manifest();
        self.inject_checked(flat, manifest, &own)
    }

    /// Overwrites every parameter from a flat vector.
    pub fn inject_all(&mut self, flat: &[f32], manifest: &Manifest) -> Result<()> {
        let own = self.full_manifest();
        self.inject_checked(flat, manifest, &own)
    }

    fn inject_checked(&mut self, flat: &[f32], manifest: &Manifest, own: &Manifest) -> Result<()> {
        if manifest != own {
            let detail = first_difference(own, manifest);
            return Err(Error::protocol(format!("parameter manifest mismatch: {detail}")));
        }
        if flat.len() != own.len() {
            return Err(Error::protocol(format!(
                "parameter vector has {} values, manifest expects {}",
                flat.len(),
                own.len()
            )));
        }
        for e in &own.entries {
            let id = self.index[&e.name];
            let n = self.entries[id].1.numel();
            self.entries[id]
                .1
                .data_mut()
                .copy_from_slice(&flat[e.offset..e.offset + n]);
        }
        Ok(())
    }
}

fn first_difference(expected: &Manifest, got: &Manifest) -> String {
    if expected.entries.len() != got.entries.len() {
        return format!("expected {} entries, got {}", expected.entries.len(), got.entries.len());
    }
    for (a, b) in expected.entries.iter().zip(&got.entries) {
        if a != b {
            return format!("expected {} {:?}, got {} {:?}", a.name, a.shape, b.name, b.shape);
        }
    }
    "unknown".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::full(vec![2, 2], 1.0), false).unwrap();
        s.insert("b", Tensor::full(vec![3], 2.0), true).unwrap();
        s.insert("c", Tensor::full(vec![1], 3.0), false).unwrap();
        s.insert("d", Tensor::full(vec![2], 4.0), true).unwrap();
        s
    }

    #[test]
    fn extract_concatenates_tagged_entries_in_order() {
        let s = store();
        let (flat, m) = s.extract_bottleneck();
        assert_eq!(flat, vec![2.0, 2.0, 2.0, 4.0, 4.0]);
        assert_eq!(m.len(), 5);
        assert_eq!(m.entries[1].offset, 3);
        assert_eq!(s.bottleneck_names(), vec!["b", "d"]);
        assert_eq!(s.count_bottleneck(), 5);
        assert_eq!(s.count_params(), 10);
    }

    #[test]
    fn inject_zeros_leaves_untagged_alone() {
        let mut s = store();
        let before = s.clone();
        let m = s.bottleneck_manifest();
        s.inject_bottleneck(&[0.0; 5], &m).unwrap();
        assert!(s.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(s.get("d").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(s.get("a"), before.get("a"));
        assert_eq!(s.get("c"), before.get("c"));
    }

    #[test]
    fn inject_rejects_mismatch() {
        let mut s = store();
        let mut m = s.bottleneck_manifest();
        m.entries[0].shape = vec![4];
        assert!(matches!(s.inject_bottleneck(&[0.0; 6], &m), Err(Error::Protocol(_))));
        let m = s.bottleneck_manifest();
        assert!(matches!(s.inject_bottleneck(&[0.0; 4], &m), Err(Error::Protocol(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.insert("a", Tensor::zeros(vec![1]), false).is_err());
    }

    #[test]
    fn absorb_prefixes_and_keeps_tags() {
        let mut outer = ParameterStore::new();
        outer.insert("x", Tensor::zeros(vec![1]), false).unwrap();
        outer.absorb("inner", store()).unwrap();
        assert_eq!(outer.bottleneck_names(), vec!["inner.b", "inner.d"]);
        assert!(outer.is_bottleneck("inner.b"));
        assert!(!outer.is_bottleneck("inner.a"));
    }
}
