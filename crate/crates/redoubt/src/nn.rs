//! Parameters, freezing, and the Adam optimizer.
//!
//! A [`ParamStore`] is an ordered name → [`Variable`] map shared by every
//! model that trains in a run; prefixes ("attacker.encoder.") carve it into
//! the per-step update sets. Freezing is a store-level prefix list: frozen
//! parameters are bound to tapes as constants, so no gradient is ever
//! computed for them, and the optimizer skips them as a second line of
//! defense.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Variable {
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
    grad_set: bool,
}

impl Variable {
    pub fn new(value: Tensor) -> Variable {
        let grad = Tensor::zeros(value.dims());
        Variable { value, grad, requires_grad: true, grad_set: false }
    }

    /// Overwrites the gradient accumulator directly (tests and tools; the
    /// training loops go through [`Binding::flush_grads`]).
    pub fn set_grad(&mut self, g: Tensor) {
        assert_eq!(g.dims(), self.value.dims());
        self.grad = g;
        self.grad_set = true;
    }
}

#[derive(Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Variable>,
    frozen: Vec<String>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.params.insert(name.to_string(), Variable::new(value));
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Result<&Variable> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Engine(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Variable> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Engine(format!("unknown parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Variable)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Marks every parameter under `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) -> Result<()> {
        if !self.params.keys().any(|n| n.starts_with(prefix)) {
            return Err(Error::Engine(format!("freeze prefix {prefix} matches nothing")));
        }
        if !self.frozen.iter().any(|p| p == prefix) {
            self.frozen.push(prefix.to_string());
        }
        Ok(())
    }

    pub fn frozen_prefixes(&self) -> &[String] {
        &self.frozen
    }

    pub fn set_frozen_prefixes(&mut self, prefixes: Vec<String>) {
        self.frozen = prefixes;
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Raw little-endian bytes of every parameter under `prefix`, in store
    /// order; the byte-equality probe the freeze tests use.
    pub fn bytes_under(&self, prefix: &str) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, v) in &self.params {
            if name.starts_with(prefix) {
                for x in v.value.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }
}

/// Binds store parameters onto a tape: trainable ones as differentiable
/// leaves, frozen or `requires_grad = false` ones as constants.
pub struct Binding {
    bound: IndexMap<String, (Var, bool)>,
}

impl Binding {
    /// Binds every parameter whose name starts with one of `prefixes`.
    /// With `trainable = false` all of them are bound as constants
    /// regardless of their flags (the read-only side of a step).
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefixes: &[&str], trainable: bool) -> Binding {
        let mut bound = IndexMap::new();
        for (name, p) in store.iter() {
            if !prefixes.iter().any(|pref| name.starts_with(pref)) {
                continue;
            }
            let diff = trainable && p.requires_grad && !store.is_frozen(name);
            let var = if diff {
                tape.leaf(p.value.clone())
            } else {
                tape.constant(p.value.clone())
            };
            bound.insert(name.clone(), (var, diff));
        }
        Binding { bound }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.bound
            .get(name)
            .map(|&(v, _)| v)
            .ok_or_else(|| Error::Engine(format!("parameter {name} not bound")))
    }

    /// Adds tape gradients into the store for every differentiable bound
    /// parameter that received one.
    pub fn flush_grads(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (name, &(var, diff)) in &self.bound {
            if !diff {
                continue;
            }
            if let Some(g) = tape.grad(var) {
                let p = store.get_mut(name)?;
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
                p.grad_set = true;
            }
        }
        Ok(())
    }
}

/// Adam hyperparameters: paper learning rates are supplied per phase, the
/// rest are the standard defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment state per parameter plus the shared step counter.
#[derive(Debug)]
pub struct AdamState {
    pub hp: AdamParams,
    pub t: u64,
    pub moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(hp: AdamParams) -> AdamState {
        AdamState { hp, t: 0, moments: IndexMap::new() }
    }

    /// One bias-corrected Adam step over the parameters selected by
    /// `scope` (a name prefix; "" selects everything). Frozen parameters
    /// are skipped; gradients of updated parameters are zeroed afterward.
    pub fn step(&mut self, store: &mut ParamStore, scope: &str) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let AdamParams { lr, beta1, beta2, eps } = self.hp;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        let names: Vec<String> = store
            .names()
            .filter(|n| n.starts_with(scope))
            .cloned()
            .collect();
        let mut updated = 0;
        for name in names {
            if store.is_frozen(&name) {
                continue;
            }
            let p = store.get_mut(&name)?;
            if !p.requires_grad {
                continue;
            }
            if !p.grad_set {
                return Err(Error::Engine(format!("adam step: no gradient for {name}")));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.dims()), Tensor::zeros(p.value.dims())));
            let pd = p.value.data_mut();
            let gd = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let g = gd[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * g;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g * g;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.grad.data_mut().fill(0.0);
            p.grad_set = false;
            updated += 1;
        }
        if updated == 0 {
            return Err(Error::Engine(format!("adam step: scope {scope:?} updated nothing")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn first_step_is_bias_corrected_lr() {
        let mut store = scalar_store(0.0);
        {
            let p = store.get_mut("w").unwrap();
            p.grad = Tensor::scalar(1.0);
            p.grad_set = true;
        }
        let mut adam = AdamState::new(AdamParams::with_lr(0.001));
        adam.step(&mut store, "").unwrap();
        let w = store.get("w").unwrap().value.item();
        assert!((w + 0.001).abs() < 1e-9, "w = {w}");
    }

    #[test]
    fn frozen_param_never_moves() {
        let mut store = scalar_store(1.5);
        store.freeze_prefix("w").unwrap();
        {
            let p = store.get_mut("w").unwrap();
            p.grad = Tensor::scalar(10.0);
            p.grad_set = true;
        }
        let mut adam = AdamState::new(AdamParams::with_lr(0.5));
        assert!(adam.step(&mut store, "").is_err(), "nothing unfrozen to update");
        assert_eq!(store.get("w").unwrap().value.item(), 1.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(AdamParams::with_lr(0.1));
        assert!(adam.step(&mut store, "").is_err());
    }

    #[test]
    fn freeze_prefix_must_match() {
        let mut store = scalar_store(0.0);
        assert!(store.freeze_prefix("nope.").is_err());
    }

    #[test]
    fn quadratic_descent_converges() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(AdamParams::with_lr(0.1));
        for _ in 0..200 {
            let w = store.get("w").unwrap().value.item();
            let p = store.get_mut("w").unwrap();
            p.grad = Tensor::scalar(w - 3.0);
            p.grad_set = true;
            adam.step(&mut store, "").unwrap();
        }
        let w = store.get("w").unwrap().value.item();
        assert!((w - 3.0).abs() < 0.15, "did not approach the minimum: {w}");
    }
}
