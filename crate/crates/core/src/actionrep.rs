//! Learned action features.
//!
//! When actions come without descriptive features, a transition model
//! `s_{t+1} ≈ π_ψ(s_t, ω_a)` is fit on consecutive observations and the
//! learned per-action embeddings `ω_a` are then used as action features.
//! The state is the observation context.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemonstrationSet, Observation};
use crate::diffcore::{ParamGroup, ParamId, ParamStore, Sgd, SgdConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::pnn::{Activation, Architecture, Mlp, ParamVars};
use crate::rng::{derive, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionConfig {
    pub hidden: usize,
    pub embedding_dim: usize,
    pub embedding_init_std: f64,
    pub seed: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embedding_dim: 8,
            embedding_init_std: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub net: Mlp,
    pub params: ParamStore,
    /// One embedding per action id.
    pub action_embeddings: Vec<Vec<ParamId>>,
    pub state_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    /// Mean squared error per epoch.
    pub loss_curve: Vec<f64>,
    /// Schedules with fewer than two observations.
    pub skipped_schedules: usize,
}

/// One `(s_t, a_t, s_{t+1})` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub next: Vec<f64>,
}

/// Consecutive-observation transitions of every schedule, using the first
/// taken action. Also returns the number of schedules too short to use.
pub fn transitions(data: &DemonstrationSet) -> (Vec<Transition>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for s in &data.schedules {
        if s.observations.len() < 2 {
            skipped += 1;
            continue;
        }
        for w in s.observations.windows(2) {
            if let Some(&a) = w[0].taken_actions.first() {
                out.push(Transition {
                    state: w[0].context.clone(),
                    action: a,
                    next: w[1].context.clone(),
                });
            }
        }
    }
    (out, skipped)
}

impl TransitionModel {
    pub fn new(state_dim: usize, action_count: usize, config: &TransitionConfig) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng(derive(config.seed, 0));
        let net = Mlp::new(
            state_dim + config.embedding_dim,
            &[config.hidden],
            state_dim,
            Activation::Tanh,
            &mut params,
            &mut r,
        );
        let normal = Normal::new(0.0, config.embedding_init_std).expect("valid std");
        let action_embeddings = (0..action_count)
            .map(|_| {
                (0..config.embedding_dim)
                    .map(|_| params.push(r.sample(normal), ParamGroup::Embedding))
                    .collect()
            })
            .collect();
        Self {
            net,
            params,
            action_embeddings,
            state_dim,
        }
    }

    pub fn action_count(&self) -> usize {
        self.action_embeddings.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.action_embeddings.first().map_or(0, |e| e.len())
    }

    /// Learned embedding `ω_a`, used as the action's feature vector.
    pub fn action_features(&self, action: usize) -> Result<Vec<f64>> {
        let ids = self.action_embeddings.get(action).ok_or(Error::UnknownAction(action))?;
        Ok(ids.iter().map(|&p| self.params.value(p)).collect())
    }

    pub fn predict(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::WidthMismatch {
                expected: self.state_dim,
                got: state.len(),
            });
        }
        let mut x = state.to_vec();
        x.extend(self.action_features(action)?);
        Ok(self.net.eval(&self.params, &x))
    }

    /// Mean squared error over `ts`.
    pub fn mse(&self, ts: &[Transition]) -> Result<f64> {
        let mut total = 0.0;
        for t in ts {
            let p = self.predict(&t.state, t.action)?;
            total += p.iter().zip(&t.next).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.state_dim as f64;
        }
        Ok(total / ts.len().max(1) as f64)
    }

    fn check(&self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next.len() != self.state_dim {
            return Err(Error::WidthMismatch {
                expected: self.state_dim,
                got: t.state.len().max(t.next.len()),
            });
        }
        if t.action >= self.action_count() {
            return Err(Error::UnknownAction(t.action));
        }
        Ok(())
    }

    /// Records the mean squared error of `batch`; returns the loss node.
    fn record(&self, tape: &mut Tape, batch: &[&Transition]) -> Var {
        let mut vars = ParamVars::new(&self.params);
        let mut terms = Vec::with_capacity(batch.len() * self.state_dim);
        for t in batch {
            let mut input: Vec<Var> = t.state.iter().map(|&v| tape.constant(v)).collect();
            input.extend(self.action_embeddings[t.action].iter().map(|&p| vars.get(tape, p)));
            let out = self.net.record(tape, &mut vars, &input);
            for (&o, &y) in out.iter().zip(&t.next) {
                let target = tape.constant(y);
                let d = tape.sub(o, target);
                terms.push(tape.mul(d, d));
            }
        }
        let total = tape.sum(&terms);
        let scale = tape.constant(1.0 / (batch.len() * self.state_dim) as f64);
        tape.mul(total, scale)
    }

    /// Loss over `ts` and its gradient for every parameter.
    pub fn objective(&mut self, ts: &[Transition]) -> Result<(f64, Vec<f64>)> {
        for t in ts {
            self.check(t)?;
        }
        let batch: Vec<&Transition> = ts.iter().collect();
        let mut tape = Tape::new();
        let loss = self.record(&mut tape, &batch);
        tape.output(loss);
        self.params.zero_grads();
        let value = tape.forward(&[], &self.params)?[0];
        tape.backward(&[1.0], &mut self.params)?;
        let grads = self.params.iter().map(|(_, p)| p.grad).collect();
        self.params.zero_grads();
        Ok((value, grads))
    }
}

/// Fits a transition model on the consecutive observations of `data`;
/// `ψ` and every `ω_a` are updated jointly.
pub fn train_transition(
    data: &DemonstrationSet,
    config: &TransitionConfig,
    sgd: &SgdConfig,
) -> Result<(TransitionModel, TransitionReport)> {
    sgd.validate()?;
    let (ts, skipped) = transitions(data);
    if skipped > 0 {
        log::info!("transition model: skipped {skipped} schedule(s) shorter than two observations");
    }
    let mut model = TransitionModel::new(data.context_dim, data.action_count, config);
    for t in &ts {
        model.check(t)?;
    }
    let mut report = TransitionReport {
        loss_curve: Vec::with_capacity(sgd.epochs),
        skipped_schedules: skipped,
    };
    if ts.is_empty() {
        return Ok((model, report));
    }
    let mut order: Vec<usize> = (0..ts.len()).collect();
    let mut shuffle = rng(derive(sgd.seed, 0x7a11));
    let mut opt = Sgd::new();
    let mut tape = Tape::new();
    for epoch in 0..sgd.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        for (step, chunk) in order.chunks(sgd.batch_size).enumerate() {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| &ts[i]).collect();
            tape.clear();
            let loss = model.record(&mut tape, &batch);
            tape.output(loss);
            let value = tape.forward(&[], &model.params)?[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { loss: value, epoch, step });
            }
            tape.backward(&[1.0], &mut model.params)?;
            opt.step(&mut model.params, sgd);
            sum += value * batch.len() as f64;
        }
        report.loss_curve.push(sum / ts.len() as f64);
    }
    Ok((model, report))
}

/// Copy of `data` whose action features are the learned embeddings.
pub fn with_learned_features(data: &DemonstrationSet, model: &TransitionModel) -> Result<DemonstrationSet> {
    if model.action_count() != data.action_count {
        return Err(Error::WidthMismatch {
            expected: data.action_count,
            got: model.action_count(),
        });
    }
    let features: Vec<Vec<f64>> = (0..model.action_count())
        .map(|a| model.action_features(a))
        .collect::<Result<_>>()?;
    let mut out = data.clone();
    out.action_dim = model.embedding_dim();
    for s in &mut out.schedules {
        for o in &mut s.observations {
            o.action_features = features.clone();
        }
    }
    Ok(out)
}

/// Observation with the same context and labels but action features
/// replaced by `features`.
pub fn relabel_features(obs: &Observation, features: &[Vec<f64>]) -> Observation {
    Observation {
        action_features: features.to_vec(),
        ..obs.clone()
    }
}
