//! Stochastic gradient descent over a [`ParamStore`], with prefix freezing.

use crate::tape::{Tape, Var};
use crate::tensor::{path_has_prefix, ParamStore};
use std::collections::BTreeMap;

/// Parameter paths bound to tape leaves for one forward/backward pass.
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, path: &str) -> Var {
        *self
            .vars
            .get(path)
            .unwrap_or_else(|| panic!("parameter not bound on tape: {path}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Copies every parameter of `store` onto `tape` as a leaf. Leaves whose path
/// falls under a frozen prefix are created without gradient tracking, which
/// also prunes backward work for subgraphs that feed only frozen parameters.
pub fn bind_params(tape: &mut Tape, store: &ParamStore, frozen_prefixes: &[&str]) -> Bindings {
    let mut vars = BTreeMap::new();
    for (path, tensor) in store.iter() {
        let frozen = frozen_prefixes.iter().any(|p| path_has_prefix(path, p));
        let var = tape.leaf_from(
            tensor.dims().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad() && !frozen,
        );
        vars.insert(path.to_string(), var);
    }
    Bindings { vars }
}

/// Copies gradients computed on `tape` back into the store tensors.
/// Parameters whose leaves were bound frozen keep an absent gradient.
pub fn absorb_grads(store: &mut ParamStore, tape: &Tape, bindings: &Bindings) {
    for (path, var) in bindings.iter() {
        if let Some(g) = tape.grad(var) {
            store.get_mut(path).set_grad(g.to_vec());
        }
    }
}

/// One SGD update: `p <- p - lr * grad(p)` for every non-frozen parameter.
/// Frozen parameters stay bit-identical. All gradients are cleared.
///
/// Panics if a non-frozen parameter has no gradient.
pub fn sgd_step(store: &mut ParamStore, lr: f64, frozen_prefixes: &[&str]) {
    assert!(lr > 0.0, "learning rate must be positive");
    for (path, tensor) in store.iter_mut() {
        if frozen_prefixes.iter().any(|p| path_has_prefix(path, p)) {
            tensor.clear_grad();
            continue;
        }
        let grad = tensor
            .grad()
            .unwrap_or_else(|| panic!("missing gradient on non-frozen parameter: {path}"))
            .to_vec();
        for (p, g) in tensor.data_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        tensor.clear_grad();
    }
}

/// Momentum state for [`sgd_step_momentum`], keyed like the store.
#[derive(Debug, Clone, Default)]
pub struct Velocity {
    buffers: BTreeMap<String, Vec<f64>>,
}

/// Heavy-ball SGD: `v <- momentum * v + grad; p <- p - lr * v`. With zero
/// momentum this reduces exactly to [`sgd_step`]. Frozen parameters stay
/// bit-identical and keep no velocity.
pub fn sgd_step_momentum(
    store: &mut ParamStore,
    lr: f64,
    momentum: f64,
    frozen_prefixes: &[&str],
    velocity: &mut Velocity,
) {
    assert!(lr > 0.0, "learning rate must be positive");
    assert!((0.0..1.0).contains(&momentum), "momentum must be in [0, 1)");
    for (path, tensor) in store.iter_mut() {
        if frozen_prefixes.iter().any(|p| path_has_prefix(path, p)) {
            tensor.clear_grad();
            continue;
        }
        let grad = tensor
            .grad()
            .unwrap_or_else(|| panic!("missing gradient on non-frozen parameter: {path}"))
            .to_vec();
        let v = velocity
            .buffers
            .entry(path.to_string())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for ((p, g), vel) in tensor.data_mut().iter_mut().zip(&grad).zip(v.iter_mut()) {
            *vel = momentum * *vel + g;
            *p -= lr * *vel;
        }
        tensor.clear_grad();
    }
}

/// Scales all present gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sum_sq = 0.0;
    for (_, tensor) in store.iter() {
        if let Some(g) = tensor.grad() {
            sum_sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, tensor) in store.iter_mut() {
            if let Some(g) = tensor.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                tensor.set_grad(scaled);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn update_matches_definition() {
        // p = 1.0, grad = 2.0, lr = 0.1 -> p' = 0.8
        let mut store = ParamStore::new();
        let mut t = Tensor::scalar(1.0);
        t.set_grad(vec![2.0]);
        store.insert("alpha/p", t);
        sgd_step(&mut store, 0.1, &[]);
        assert_eq!(store.get("alpha/p").data(), &[0.8]);
        assert!(store.get("alpha/p").grad().is_none());
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut store = ParamStore::new();
        let mut t = Tensor::new(vec![3], vec![1.0, -2.0, 3.0]);
        t.set_grad(vec![0.0; 3]);
        store.insert("alpha/p", t);
        sgd_step(&mut store, 1e-4, &[]);
        assert_eq!(store.get("alpha/p").data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn frozen_prefix_is_untouched_and_cleared() {
        let mut store = ParamStore::new();
        let mut a = Tensor::scalar(5.0);
        a.set_grad(vec![100.0]);
        store.insert("alpha/w", a);
        let mut b = Tensor::scalar(1.0);
        b.set_grad(vec![1.0]);
        store.insert("chi_1/w", b);
        sgd_step(&mut store, 0.5, &["alpha"]);
        assert_eq!(store.get("alpha/w").data(), &[5.0]);
        assert!(store.get("alpha/w").grad().is_none());
        assert_eq!(store.get("chi_1/w").data(), &[0.5]);
    }

    #[test]
    #[should_panic(expected = "missing gradient")]
    fn missing_grad_on_active_param_panics() {
        let mut store = ParamStore::new();
        store.insert("alpha/w", Tensor::scalar(1.0));
        sgd_step(&mut store, 0.1, &[]);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut store = ParamStore::new();
        let mut t = Tensor::new(vec![2], vec![0.0, 0.0]);
        t.set_grad(vec![3.0, 4.0]);
        store.insert("alpha/w", t);
        let norm = clip_global_norm(&mut store, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = store.get("alpha/w").grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
