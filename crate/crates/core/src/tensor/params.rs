//! Named trainable parameters and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;

use super::{GradMap, Tensor, TensorError};

/// Adam hyperparameters. Weight decay is classic L2 regularization folded
/// into the gradient before the moment updates.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Param {
    tensor: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Trainable parameters addressed by name.
///
/// Parameters are leaf tensors; every optimizer step replaces them with
/// fresh leaves, so models must re-fetch tensors by name on each forward
/// pass rather than holding on to old handles.
#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(
        &mut self,
        name: &str,
        values: Vec<f64>,
        shape: Vec<usize>,
    ) -> Result<(), TensorError> {
        let len = values.len();
        let tensor = Tensor::leaf(values, shape)?;
        self.params.insert(
            name.to_string(),
            Param {
                tensor,
                m: vec![0.0; len],
                v: vec![0.0; len],
                step: 0,
            },
        );
        Ok(())
    }

    /// Glorot-uniform initialized `(rows, cols)` matrix: U(-a, a) with
    /// `a = sqrt(6 / (rows + cols))`.
    pub fn init_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-a..a))
            .collect();
        self.insert(name, values, vec![rows, cols])
    }

    pub fn init_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<(), TensorError> {
        let n = shape.iter().product();
        self.insert(name, vec![0.0; n], shape)
    }

    /// Current tensor for `name`, if present. The returned handle is only
    /// valid until the next optimizer step.
    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|p| p.tensor.clone())
    }

    pub fn values(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(|p| p.tensor.values())
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.params.get(name).map(|p| p.tensor.shape())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.tensor.values().len()).sum()
    }

    /// Replaces the values of an existing parameter, keeping optimizer state.
    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<(), TensorError> {
        let param = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::InvalidArgument {
                op: "set_values",
                details: format!("unknown parameter {name:?}"),
            })?;
        if values.len() != param.tensor.values().len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_values",
                details: format!(
                    "{} values for parameter {name:?} of shape {:?}",
                    values.len(),
                    param.tensor.shape()
                ),
            });
        }
        param.tensor = Tensor::leaf(values, param.tensor.shape().to_vec())?;
        Ok(())
    }

    /// Adds `delta` to one element in place; used by finite differencing.
    pub(crate) fn nudge(&mut self, name: &str, index: usize, delta: f64) -> Result<(), TensorError> {
        let current = self
            .values(name)
            .ok_or_else(|| TensorError::InvalidArgument {
                op: "nudge",
                details: format!("unknown parameter {name:?}"),
            })?
            .to_vec();
        let mut next = current;
        next[index] += delta;
        self.set_values(name, next)
    }

    /// One Adam update over all parameters. Parameters absent from `grads`
    /// are treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &GradMap, cfg: &AdamConfig) -> Result<(), TensorError> {
        for param in self.params.values_mut() {
            let n = param.tensor.values().len();
            let zero = vec![0.0; n];
            let g_raw = grads.get(&param.tensor).unwrap_or(&zero);
            param.step += 1;
            let t = param.step;
            let bias1 = 1.0 - cfg.beta1.powi(t as i32);
            let bias2 = 1.0 - cfg.beta2.powi(t as i32);
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let w = param.tensor.values()[i];
                let g = g_raw[i] + cfg.weight_decay * w;
                param.m[i] = cfg.beta1 * param.m[i] + (1.0 - cfg.beta1) * g;
                param.v[i] = cfg.beta2 * param.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = param.m[i] / bias1;
                let v_hat = param.v[i] / bias2;
                next.push(w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
            }
            param.tensor = Tensor::leaf(next, param.tensor.shape().to_vec())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_single_step_hand_value() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1.0], vec![1]).unwrap();
        let w = store.get("w").unwrap();
        // loss = w, so dloss/dw = 1.
        let grads = w.sum().unwrap().backward().unwrap();
        store
            .adam_step(&grads, &AdamConfig::default())
            .unwrap();
        // m_hat = v_hat = 1 after bias correction, so the update is
        // lr / (1 + eps).
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        let got = store.values("w").unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "got {got}");
        assert!((got - 0.999).abs() < 1e-10);
    }

    #[test]
    fn adam_two_steps_track_manual_recurrence() {
        let mut store = ParamStore::new();
        store.insert("w", vec![0.5], vec![1]).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        // Manual reference: loss = w^2, gradient 2w.
        let mut w = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2u32 {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            w -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            let tensor = store.get("w").unwrap();
            let loss = tensor.mul(&tensor).unwrap().sum().unwrap();
            let grads = loss.backward().unwrap();
            store.adam_step(&grads, &cfg).unwrap();
            let got = store.values("w").unwrap()[0];
            assert!((got - w).abs() < 1e-14, "step {t}: {got} vs {w}");
        }
    }

    #[test]
    fn weight_decay_pulls_toward_zero_without_loss_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2.0], vec![1]).unwrap();
        store.insert("used", vec![1.0], vec![1]).unwrap();
        let cfg = AdamConfig {
            weight_decay: 5e-4,
            ..AdamConfig::default()
        };
        // Loss touches only "used"; "w" still decays.
        let used = store.get("used").unwrap();
        let grads = used.sum().unwrap().backward().unwrap();
        store.adam_step(&grads, &cfg).unwrap();
        assert!(store.values("w").unwrap()[0] < 2.0);
    }

    #[test]
    fn unused_param_without_decay_is_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2.0], vec![1]).unwrap();
        store.insert("used", vec![1.0], vec![1]).unwrap();
        let used = store.get("used").unwrap();
        let grads = used.sum().unwrap().backward().unwrap();
        store.adam_step(&grads, &AdamConfig::default()).unwrap();
        assert_eq!(store.values("w").unwrap()[0], 2.0);
        assert!(store.values("used").unwrap()[0] < 1.0);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let mut store = ParamStore::new();
        store
            .insert("w", vec![3.0, -2.0, 1.5], vec![3])
            .unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..400 {
            let w = store.get("w").unwrap();
            let loss = w.mul(&w).unwrap().sum().unwrap();
            let grads = loss.backward().unwrap();
            store.adam_step(&grads, &cfg).unwrap();
        }
        for &v in store.values("w").unwrap() {
            assert!(v.abs() < 0.05, "did not converge: {v}");
        }
    }

    #[test]
    fn step_replaces_tensor_identity() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1.0], vec![1]).unwrap();
        let before = store.get("w").unwrap();
        let grads = before.sum().unwrap().backward().unwrap();
        store.adam_step(&grads, &AdamConfig::default()).unwrap();
        let after = store.get("w").unwrap();
        assert_ne!(before.id(), after.id());
        // The old handle still sees the old value.
        assert_eq!(before.values(), &[1.0]);
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        store.init_glorot("w", 20, 30, &mut rng).unwrap();
        let a = (6.0f64 / 50.0).sqrt();
        for &v in store.values("w").unwrap() {
            assert!(v > -a && v < a);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let mut store2 = ParamStore::new();
        store2.init_glorot("w", 20, 30, &mut rng2).unwrap();
        assert_eq!(store.values("w").unwrap(), store2.values("w").unwrap());
    }

    #[test]
    fn set_values_validates_length() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1.0, 2.0], vec![2]).unwrap();
        assert!(store.set_values("w", vec![1.0]).is_err());
        assert!(store.set_values("missing", vec![1.0]).is_err());
        store.set_values("w", vec![5.0, 6.0]).unwrap();
        assert_eq!(store.values("w").unwrap(), &[5.0, 6.0]);
    }

    #[test]
    fn names_are_sorted() {
        let mut store = ParamStore::new();
        store.insert("b", vec![0.0], vec![1]).unwrap();
        store.insert("a", vec![0.0], vec![1]).unwrap();
        store.insert("c", vec![0.0], vec![1]).unwrap();
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["a", "b", "c"]);
    }
}
