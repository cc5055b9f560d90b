//! Named parameter storage and the Adam optimizer.
//!
//! Parameters are kept in insertion order under slash-separated names with
//! a leading slice prefix (`θe/`, `θc/`, `θg/`, `fontemb/`, `θd/`).
//! Optimizer steps operate on name prefixes so the generator and
//! discriminator can be updated independently.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SLICE_ENCODER: &str = "θe/";
pub const SLICE_CLASSIFIER: &str = "θc/";
pub const SLICE_GENERATOR: &str = "θg/";
pub const SLICE_FONT_EMBED: &str = "fontemb/";
pub const SLICE_DISCRIMINATOR: &str = "θd/";

pub struct ParameterStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore { names: Vec::new(), index: HashMap::new(), tensors: Vec::new() }
    }

    /// Register a trainable parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, mut t: Tensor) -> Result<()> {
        self.insert_inner(name, {
            t.set_requires_grad(true);
            t
        })
    }

    /// Register a non-trainable buffer (running statistics etc.).
    pub fn insert_buffer(&mut self, name: &str, mut t: Tensor) -> Result<()> {
        self.insert_inner(name, {
            t.set_requires_grad(false);
            t
        })
    }

    fn insert_inner(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArg(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::InvalidArg(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::InvalidArg(format!("unknown parameter {name}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Names in insertion order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Trainable parameter names under any of the given prefixes,
    /// in insertion order.
    pub fn trainable_under<'a>(&'a self, prefixes: &'a [&str]) -> impl Iterator<Item = &'a str> {
        self.iter()
            .filter(move |(n, t)| t.requires_grad() && prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, _)| n)
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.requires_grad()).map(Tensor::numel).sum()
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        ParameterStore::new()
    }
}

/// Adam with bias correction. One `AdamState` owns the step counter and
/// first/second-moment buffers for one slice of the parameter store.
#[derive(Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState { lr, beta1, beta2, eps, step: 0, moments: HashMap::new() }
    }

    /// Apply one update to every trainable parameter under `prefixes`,
    /// consuming (clearing) their gradients. A parameter without a gradient
    /// is an error: it means a loss term was silently disconnected.
    pub fn step(&mut self, store: &mut ParameterStore, prefixes: &[&str]) -> Result<()> {
        let names: Vec<String> =
            store.trainable_under(prefixes).map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::InvalidArg(format!("no trainable parameters under {prefixes:?}")));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in &names {
            let t = store.get_mut(name)?;
            let n = t.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = match t.grad() {
                Some(g) => g.to_vec(),
                None => return Err(Error::MissingGrad(name.clone())),
            };
            let data = t.data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            t.zero_grad();
        }
        Ok(())
    }

    /// Moment buffers in deterministic (sorted-name) order, for checkpoints.
    pub fn moments_sorted(&self) -> Vec<(&str, &Vec<f64>, &Vec<f64>)> {
        let mut out: Vec<_> =
            self.moments.iter().map(|(k, (m, v))| (k.as_str(), m, v)).collect();
        out.sort_by_key(|e| e.0);
        out
    }

    pub fn restore_moments(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != v.len() {
            return Err(Error::Checkpoint(format!("moment length mismatch for {name}")));
        }
        self.moments.insert(name.to_string(), (m, v));
        Ok(())
    }

    /// Restore one half of a moment pair (deserialization arrives one
    /// buffer at a time); the missing half defaults to zeros.
    pub fn stash_half_moment(&mut self, name: &str, vals: Vec<f64>, is_m: bool) -> Result<()> {
        let n = vals.len();
        let entry = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let slot = if is_m { &mut entry.0 } else { &mut entry.1 };
        if slot.len() != n {
            return Err(Error::Checkpoint(format!("moment length mismatch for {name}")));
        }
        *slot = vals;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, vals: Vec<f64>) -> ParameterStore {
        let mut s = ParameterStore::new();
        let n = vals.len();
        s.insert(name, Tensor::new(vec![n], vals).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // with bias correction the very first Adam step is lr * sign(g)
        // (up to eps), independent of gradient magnitude
        let mut s = store_with("θg/w", vec![1.0, 1.0]);
        s.get_mut("θg/w").unwrap().add_to_grad(&[0.3, -40.0]).unwrap();
        let mut adam = AdamState::new(0.01, 0.5, 0.999, 1e-8);
        adam.step(&mut s, &[SLICE_GENERATOR]).unwrap();
        let w = s.get("θg/w").unwrap().data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6, "{w:?}");
        assert!((w[1] - (1.0 + 0.01)).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store_with("θd/w", vec![1.0]);
        let mut adam = AdamState::new(0.01, 0.5, 0.999, 1e-8);
        let err = adam.step(&mut s, &[SLICE_DISCRIMINATOR]).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(_)), "{err}");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store_with("θc/w", vec![2.5, -1.0]);
        s.get_mut("θc/w").unwrap().add_to_grad(&[0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(0.1, 0.5, 0.999, 1e-8);
        adam.step(&mut s, &[SLICE_CLASSIFIER]).unwrap();
        assert_eq!(s.get("θc/w").unwrap().data(), &[2.5, -1.0]);
    }

    #[test]
    fn step_only_touches_requested_prefixes() {
        let mut s = ParameterStore::new();
        s.insert("θg/w", Tensor::full(vec![1], 1.0)).unwrap();
        s.insert("θd/w", Tensor::full(vec![1], 1.0)).unwrap();
        s.get_mut("θg/w").unwrap().add_to_grad(&[1.0]).unwrap();
        s.get_mut("θd/w").unwrap().add_to_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(0.01, 0.5, 0.999, 1e-8);
        adam.step(&mut s, &[SLICE_GENERATOR]).unwrap();
        assert_ne!(s.get("θg/w").unwrap().data()[0], 1.0);
        assert_eq!(s.get("θd/w").unwrap().data()[0], 1.0);
        // the untouched slice keeps its gradient for a later step
        assert!(s.get("θd/w").unwrap().grad().is_some());
        assert!(s.get("θg/w").unwrap().grad().is_none());
    }

    #[test]
    fn buffers_are_not_trainable() {
        let mut s = ParameterStore::new();
        s.insert("θe/w", Tensor::full(vec![2], 0.0)).unwrap();
        s.insert_buffer("θe/bn_rm", Tensor::full(vec![2], 0.0)).unwrap();
        let names: Vec<&str> = s.trainable_under(&[SLICE_ENCODER]).collect();
        assert_eq!(names, vec!["θe/w"]);
        assert!(s.insert("θe/w", Tensor::full(vec![1], 0.0)).is_err());
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut s = store_with("θg/x", vec![5.0]);
        let mut adam = AdamState::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..600 {
            let x = s.get("θg/x").unwrap().data()[0];
            s.get_mut("θg/x").unwrap().add_to_grad(&[2.0 * (x - 3.0)]).unwrap();
            adam.step(&mut s, &[SLICE_GENERATOR]).unwrap();
        }
        let x = s.get("θg/x").unwrap().data()[0];
        assert!((x - 3.0).abs() < 1e-3, "x = {x}");
    }
}
