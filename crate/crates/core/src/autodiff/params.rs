//! Named, ordered parameter collections: the unit of EMA smoothing,
//! checkpointing, and optimization.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::scalar::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Which network a store belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkKind {
    Extractor,
    Classifier,
    Discriminator,
    Similarity,
}

/// Ordered `(name, tensor)` entries with unique names. Iteration order is
/// insertion order and survives save/load.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<F: Real> {
    kind: NetworkKind,
    entries: Vec<(String, Tensor<F>)>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new(kind: NetworkKind) -> Self {
        Self {
            kind,
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::invalid(
                "params",
                alloc::format!("duplicate parameter name `{name}`"),
            ));
        }
        self.index.insert(String::from(name), self.entries.len());
        self.entries.push((String::from(name), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).copied().map(|i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    /// True when no tensor carries a gradient (the EMA-target assertion).
    pub fn grads_absent(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.grad().is_none())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Largest per-entry gradient norm, for abort diagnostics.
    pub fn grad_norms(&self) -> Vec<(String, F)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.grad_norm()))
            .collect()
    }

    /// Deep copy with `requires_grad` cleared everywhere.
    pub fn detached_copy(&self) -> Self {
        let mut out = Self::new(self.kind);
        for (name, t) in self.iter() {
            let mut c = t.clone();
            c.set_requires_grad(false);
            out.insert(name, c).expect("names unique in source");
        }
        out
    }

    /// Overwrites values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(CoreError::invalid("params", "store layout mismatch"));
        }
        for ((an, at), (bn, bt)) in self.entries.iter_mut().zip(&other.entries) {
            if an != bn || at.shape() != bt.shape() {
                return Err(CoreError::invalid(
                    "params",
                    alloc::format!("entry mismatch at `{an}` vs `{bn}`"),
                ));
            }
            at.values_mut().copy_from_slice(bt.values());
        }
        Ok(())
    }
}

/// Name-addressed parameter lookup during a forward pass. Implemented by
/// [`Leased`]; test harnesses wrap it to substitute a probed leaf.
pub trait ParamSource<'t, F: Real> {
    fn var(&self, name: &str) -> Result<Var<'t, F>>;
}

/// Parameter leaves placed on a tape for one forward/backward pass.
pub struct Leased<'t, F: Real> {
    vars: Vec<Var<'t, F>>,
    names: Vec<String>,
    trainable: bool,
}

impl<'t, F: Real> Leased<'t, F> {
    pub fn var(&self, name: &str) -> Result<Var<'t, F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| {
                CoreError::invalid("lease", alloc::format!("no parameter named `{name}`"))
            })
    }
}

impl<'t, F: Real> ParamSource<'t, F> for Leased<'t, F> {
    fn var(&self, name: &str) -> Result<Var<'t, F>> {
        Leased::var(self, name)
    }
}

/// A [`ParamSource`] that substitutes one named parameter with a given leaf;
/// the finite-difference harness probes parameters through this.
pub struct OverrideParam<'a, 't, F: Real> {
    pub base: &'a Leased<'t, F>,
    pub name: &'a str,
    pub var: Var<'t, F>,
}

impl<'a, 't, F: Real> ParamSource<'t, F> for OverrideParam<'a, 't, F> {
    fn var(&self, name: &str) -> Result<Var<'t, F>> {
        if name == self.name {
            Ok(self.var)
        } else {
            self.base.var(name)
        }
    }
}

impl<F: Real> ParameterStore<F> {
    /// Places every tensor on `tape`. With `trainable`, leaves participate in
    /// backward and [`ParameterStore::absorb_grads`] pulls their gradients
    /// back into the tensors' grad slots.
    pub fn lease<'t>(&self, tape: &'t Tape<F>, trainable: bool) -> Leased<'t, F> {
        let mut vars = Vec::with_capacity(self.len());
        let mut names = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            let var = tape.push(
                t.shape().to_vec(),
                alloc::rc::Rc::new(t.values().to_vec()),
                trainable,
                None,
            );
            vars.push(var);
            names.push(String::from(name));
        }
        Leased {
            vars,
            names,
            trainable,
        }
    }

    /// Accumulates tape gradients of a leased copy into the tensors.
    pub fn absorb_grads(&mut self, tape: &Tape<F>, leased: &Leased<'_, F>) -> Result<()> {
        if !leased.trainable {
            return Ok(());
        }
        for ((_, tensor), var) in self.entries.iter_mut().zip(&leased.vars) {
            if let Some(g) = tape.grad(*var) {
                tensor.accumulate_grad(&g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::<f64>::new(NetworkKind::Extractor);
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn lease_and_absorb_round_trip() {
        let mut s = ParameterStore::<f64>::new(NetworkKind::Extractor);
        s.insert("w", Tensor::new(&[2], alloc::vec![1.0, 2.0]).unwrap().with_grad())
            .unwrap();
        let tape = Tape::new();
        let leased = s.lease(&tape, true);
        let w = leased.var("w").unwrap();
        let loss = ops::sum_all(ops::mul(w, w).unwrap()).unwrap();
        tape.backward(loss).unwrap();
        s.absorb_grads(&tape, &leased).unwrap();
        assert_eq!(s.get("w").unwrap().grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn detached_copy_clears_requires_grad() {
        let mut s = ParameterStore::<f64>::new(NetworkKind::Extractor);
        s.insert("w", Tensor::zeros(&[2]).with_grad()).unwrap();
        let c = s.detached_copy();
        assert!(!c.get("w").unwrap().requires_grad());
    }
}
