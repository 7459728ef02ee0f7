use serde::{Deserialize, Serialize};

use super::param::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate_model: f64,
    pub learning_rate_embedding: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate_model: 0.01,
            learning_rate_embedding: 0.1,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            seed: 1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate_model > 0.0) {
            return bad("learning_rate_model must be > 0");
        }
        if !(self.learning_rate_embedding > 0.0) {
            return bad("learning_rate_embedding must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        Ok(())
    }
}

/// Plain SGD with heavy-ball momentum `v ← μ·v + g`, `θ ← θ − lr·v`.
///
/// Only parameters reached by the last backward pass are stepped, so the
/// embeddings of demonstrators absent from a minibatch do not drift on
/// stale momentum.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    velocity: Vec<f64>,
    rejected: u64,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of per-parameter updates skipped because of a non-finite gradient.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn step(&mut self, params: &mut ParamStore, config: &SgdConfig) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), 0.0);
        }
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            if p.trainable && p.touched {
                if p.grad.is_finite() {
                    let lr = match p.group {
                        ParamGroup::Model => config.learning_rate_model,
                        ParamGroup::Embedding => config.learning_rate_embedding,
                    };
                    let v = config.momentum * self.velocity[i] + p.grad;
                    self.velocity[i] = v;
                    p.value -= lr * v;
                } else {
                    self.rejected += 1;
                }
            }
            p.grad = 0.0;
            p.touched = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.push(value, ParamGroup::Model);
        s.accumulate(id, grad);
        s
    }

    fn cfg(lr: f64, momentum: f64) -> SgdConfig {
        SgdConfig {
            learning_rate_model: lr,
            learning_rate_embedding: lr * 10.0,
            momentum,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn plain_step() {
        let mut s = single(1.0, 0.5);
        Sgd::new().step(&mut s, &cfg(0.1, 0.0));
        let p = s.get(super::super::ParamId(0));
        assert!((p.value - 0.95).abs() < 1e-15);
        assert_eq!(p.grad, 0.0);
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut s = single(1.0, 0.0);
        Sgd::new().step(&mut s, &cfg(0.1, 0.0));
        assert_eq!(s.value(super::super::ParamId(0)), 1.0);
    }

    #[test]
    fn momentum_recurrence() {
        let id = super::super::ParamId(0);
        let mut s = single(0.0, 1.0);
        let mut opt = Sgd::new();
        let c = cfg(0.1, 0.9);
        opt.step(&mut s, &c);
        assert!((s.value(id) + 0.1).abs() < 1e-12);
        s.accumulate(id, 1.0);
        opt.step(&mut s, &c);
        assert!((s.value(id) + 0.29).abs() < 1e-12);
    }

    #[test]
    fn embedding_group_uses_its_own_rate() {
        let mut s = ParamStore::new();
        let e = s.push(0.0, ParamGroup::Embedding);
        s.accumulate(e, 1.0);
        Sgd::new().step(&mut s, &cfg(0.1, 0.0));
        assert!((s.value(e) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = single(1.0, f64::NAN);
        let mut opt = Sgd::new();
        opt.step(&mut s, &cfg(0.1, 0.0));
        assert_eq!(s.value(super::super::ParamId(0)), 1.0);
        assert_eq!(opt.rejected(), 1);
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0).validate().is_err());
        assert!(cfg(0.1, 0.5).validate().is_ok());
    }
}
