//! Personalized models: a differentiable scorer whose input is prefixed with
//! a learned per-demonstrator embedding.
//!
//! [`PersonalizedModel`] owns the shared parameters `θ`, the embedding table
//! and the training / adaptation loops. The scorer itself is any
//! [`Architecture`]; [`Mlp`] gives the personalized network and
//! [`crate::pddt::SoftTree`] the personalized differentiable tree. With an
//! embedding length of zero the same machinery trains the non-personalized
//! baselines.
//!
//! At test time a new demonstrator starts from the mean training embedding
//! and only that embedding is updated; `θ` stays bit-identical.

mod mlp;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use mlp::{Activation, Dense, Mlp};

use crate::dataset::{DemonstrationSet, DemonstratorId, Observation, Schedule};
use crate::diffcore::{
    clamp_count, renyi_loss, renyi_loss_tape, ParamGroup, ParamId, ParamStore, Sgd, SgdConfig, Tape, Var,
};
use crate::error::{Error, Result};
use crate::pairwise::{
    marginalize, normalize_scores, pair_features, pair_indices, point_features, standard_features,
    ActionDistribution, Framing, PairOptions,
};
use crate::rng::{derive, rng};

pub const CHECKPOINT_HEADER: &str = "apprentice-model v1";

/// Lazily registers parameters on a tape, once per tape.
pub struct ParamVars {
    slots: Vec<Option<Var>>,
}

impl ParamVars {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            slots: vec![None; params.len()],
        }
    }

    pub fn get(&mut self, tape: &mut Tape, id: ParamId) -> Var {
        if id.index() >= self.slots.len() {
            self.slots.resize(id.index() + 1, None);
        }
        *self.slots[id.index()].get_or_insert_with(|| tape.param(id))
    }
}

/// A differentiable map from an input vector to class logits.
pub trait Architecture {
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    /// Records the logits on `tape`.
    fn record(&self, tape: &mut Tape, vars: &mut ParamVars, input: &[Var]) -> Vec<Var>;
    /// Direct evaluation of the logits, no tape.
    fn eval(&self, params: &ParamStore, input: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub context_dim: usize,
    pub action_dim: usize,
    pub action_count: usize,
}

impl FeatureDims {
    pub fn of(set: &DemonstrationSet) -> Self {
        Self {
            context_dim: set.context_dim,
            action_dim: set.action_dim,
            action_count: set.action_count,
        }
    }

    /// Width of the non-embedding input block for a framing.
    pub fn input_width(&self, framing: Framing) -> usize {
        match framing {
            Framing::Pairwise | Framing::Pointwise => self.context_dim + self.action_dim,
            Framing::Standard => self.context_dim + self.action_count * self.action_dim,
        }
    }

    pub fn output_width(&self, framing: Framing) -> usize {
        match framing {
            Framing::Pairwise | Framing::Pointwise => 2,
            Framing::Standard => self.action_count,
        }
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if obs.context.len() != self.context_dim {
            return Err(Error::WidthMismatch {
                expected: self.context_dim,
                got: obs.context.len(),
            });
        }
        if obs.action_features.len() != self.action_count {
            return Err(Error::WidthMismatch {
                expected: self.action_count,
                got: obs.action_features.len(),
            });
        }
        if let Some(f) = obs.action_features.iter().find(|f| f.len() != self.action_dim) {
            return Err(Error::WidthMismatch {
                expected: self.action_dim,
                got: f.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Demonstrator(DemonstratorId),
    Action(usize),
}

/// A learned embedding vector and whose it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub owner: Owner,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    entries: BTreeMap<DemonstratorId, Vec<ParamId>>,
    trained: BTreeSet<DemonstratorId>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn contains(&self, id: DemonstratorId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = DemonstratorId> + '_ {
        self.entries.keys().copied()
    }

    /// Demonstrators whose embeddings were learned during training.
    pub fn trained_ids(&self) -> impl Iterator<Item = DemonstratorId> + '_ {
        self.trained.iter().copied()
    }

    pub fn params(&self, id: DemonstratorId) -> Option<&[ParamId]> {
        self.entries.get(&id).map(|v| v.as_slice())
    }

    pub fn values(&self, id: DemonstratorId, store: &ParamStore) -> Option<Vec<f64>> {
        self.params(id)
            .map(|ps| ps.iter().map(|&p| store.value(p)).collect())
    }

    pub fn get(&self, id: DemonstratorId, store: &ParamStore) -> Option<Embedding> {
        self.values(id, store).map(|values| Embedding {
            owner: Owner::Demonstrator(id),
            values,
        })
    }

    /// Mean over the trained embeddings (zeros when there are none).
    pub fn mean(&self, store: &ParamStore) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        let n = self.trained.len();
        if n == 0 {
            return m;
        }
        for id in &self.trained {
            for (k, v) in self.values(*id, store).unwrap().into_iter().enumerate() {
                m[k] += v;
            }
        }
        m.iter_mut().for_each(|x| *x /= n as f64);
        m
    }

    fn insert(&mut self, id: DemonstratorId, values: &[f64], store: &mut ParamStore) -> Vec<ParamId> {
        let ps: Vec<ParamId> = values
            .iter()
            .map(|&v| store.push(v, ParamGroup::Embedding))
            .collect();
        self.entries.insert(id, ps.clone());
        ps
    }

    pub fn set(&mut self, id: DemonstratorId, values: &[f64], store: &mut ParamStore) {
        match self.entries.get(&id) {
            Some(ps) => {
                for (&p, &v) in ps.iter().zip(values) {
                    store.set_value(p, v);
                }
            }
            None => {
                self.insert(id, values, store);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerOptions {
    pub framing: Framing,
    pub embedding_dim: usize,
    /// Rényi order of the training loss.
    pub alpha: f64,
    pub pair: PairOptions,
    /// Keep `f(a, a)` terms in the marginalization.
    pub include_self: bool,
    pub embedding_init_std: f64,
    /// After training, restore the parameters of the epoch with the lowest
    /// mean training loss.
    pub keep_best_epoch: bool,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        Self {
            framing: Framing::Pairwise,
            embedding_dim: 2,
            alpha: 1.0,
            pair: PairOptions {
                multi_label: false,
                available_only: true,
            },
            include_self: false,
            embedding_init_std: 0.1,
            keep_best_epoch: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    /// Predict each decision, then take one step on it.
    Online,
    /// Fit the embedding on the whole schedule, then predict.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    /// Passes over the schedule in batch mode.
    pub passes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            mode: AdaptMode::Online,
            passes: 30,
            learning_rate: 0.1,
            momentum: 0.0,
        }
    }
}

impl AdaptConfig {
    fn sgd(&self) -> Result<SgdConfig> {
        let c = SgdConfig {
            learning_rate_embedding: self.learning_rate,
            momentum: self.momentum,
            batch_size: 1,
            epochs: self.passes.max(1),
            ..SgdConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub clamp_events: usize,
    pub rejected_updates: u64,
}

/// Outcome of predicting one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEval {
    pub predictions: Vec<usize>,
    pub correct: usize,
    pub total: usize,
    /// Mean per-decision divergence between the taken set and the prediction.
    pub loss: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Sample {
    owner: Option<DemonstratorId>,
    features: Vec<f64>,
    target: Vec<f64>,
    /// Logit subset for the standard framing.
    candidates: Option<Vec<usize>>,
    weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedModel<A> {
    pub arch: A,
    pub params: ParamStore,
    pub embeddings: EmbeddingTable,
    pub options: LearnerOptions,
    pub dims: FeatureDims,
    pub seed: u64,
}

pub type PnnModel = PersonalizedModel<Mlp>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

impl PersonalizedModel<Mlp> {
    pub fn mlp(dims: FeatureDims, options: LearnerOptions, config: &MlpConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let inputs = options.embedding_dim + dims.input_width(options.framing);
        let arch = Mlp::new(
            inputs,
            &config.hidden,
            dims.output_width(options.framing),
            config.activation,
            &mut params,
            &mut rng(derive(seed, 0)),
        );
        Self::new(arch, params, dims, options, seed)
    }
}

impl<A: Architecture> PersonalizedModel<A> {
    pub fn new(arch: A, params: ParamStore, dims: FeatureDims, options: LearnerOptions, seed: u64) -> Self {
        let embeddings = EmbeddingTable::new(options.embedding_dim);
        Self {
            arch,
            params,
            embeddings,
            options,
            dims,
            seed,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.options.embedding_dim
    }

    pub fn is_personalized(&self) -> bool {
        self.options.embedding_dim > 0
    }

    /// Checksum over the shared parameters `θ`.
    pub fn theta_checksum(&self) -> u64 {
        self.params.checksum(ParamGroup::Model)
    }

    pub fn embedding(&self, id: DemonstratorId) -> Option<Embedding> {
        self.embeddings.get(id, &self.params)
    }

    pub fn mean_embedding(&self) -> Vec<f64> {
        self.embeddings.mean(&self.params)
    }

    fn ensure_training_embeddings(&mut self, data: &DemonstrationSet) {
        if !self.is_personalized() {
            return;
        }
        let normal = Normal::new(0.0, self.options.embedding_init_std).expect("valid std");
        for id in data.demonstrators() {
            if !self.embeddings.contains(id) {
                let mut r = rng(derive(self.seed, 1 + u64::from(id.0)));
                let v: Vec<f64> = (0..self.embedding_dim()).map(|_| r.sample(normal)).collect();
                self.embeddings.insert(id, &v, &mut self.params);
            }
            self.embeddings.trained.insert(id);
        }
    }

    fn observation_samples(&self, owner: Option<DemonstratorId>, obs: &Observation, weight: f64) -> Result<Vec<Sample>> {
        self.dims.check(obs)?;
        let mut out = Vec::new();
        match self.options.framing {
            Framing::Pairwise => {
                for (a, b, y) in pair_indices(obs, self.options.pair)? {
                    let y = f64::from(y);
                    out.push(Sample {
                        owner,
                        features: pair_features(obs, a, b),
                        target: vec![1.0 - y, y],
                        candidates: None,
                        weight,
                    });
                }
            }
            Framing::Pointwise => {
                for a in self.candidates(obs) {
                    let y = if obs.taken_actions.contains(&a) { 1.0 } else { 0.0 };
                    out.push(Sample {
                        owner,
                        features: point_features(obs, a),
                        target: vec![1.0 - y, y],
                        candidates: None,
                        weight,
                    });
                }
            }
            Framing::Standard => {
                let cands = self.candidates(obs);
                let target = cands
                    .iter()
                    .map(|a| if obs.taken_actions.contains(a) { 1.0 } else { 0.0 })
                    .collect();
                out.push(Sample {
                    owner,
                    features: standard_features(obs),
                    target,
                    candidates: Some(cands),
                    weight,
                });
            }
        }
        Ok(out)
    }

    fn candidates(&self, obs: &Observation) -> Vec<usize> {
        candidates(obs, &self.options)
    }

    fn owner(&self, id: DemonstratorId) -> Option<DemonstratorId> {
        self.is_personalized().then_some(id)
    }

    /// Records one sample's loss (already weighted) on the tape.
    fn record_sample(&self, tape: &mut Tape, vars: &mut ParamVars, s: &Sample, watched: &mut Vec<Var>) -> Result<Var> {
        let mut input = Vec::with_capacity(self.arch.input_width());
        if let Some(id) = s.owner {
            let ps = self
                .embeddings
                .params(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no embedding for {id}")))?;
            input.extend(ps.iter().map(|&p| vars.get(tape, p)));
        }
        input.extend(s.features.iter().map(|&x| tape.constant(x)));
        if input.len() != self.arch.input_width() {
            return Err(Error::WidthMismatch {
                expected: self.arch.input_width(),
                got: input.len(),
            });
        }
        let logits = self.arch.record(tape, vars, &input);
        let logits = match &s.candidates {
            Some(c) => c.iter().map(|&a| logits[a]).collect(),
            None => logits,
        };
        let probs = tape.softmax(&logits);
        let (loss, w) = renyi_loss_tape(tape, &probs, &s.target, self.options.alpha)?;
        watched.extend(w);
        if s.weight != 1.0 {
            let k = tape.constant(s.weight);
            Ok(tape.mul(k, loss))
        } else {
            Ok(loss)
        }
    }

    /// Forward and backward pass of the mean loss over `batch`; gradients
    /// are left in the store. Returns the loss and the clamp count.
    fn loss_and_grad(&mut self, batch: &[&Sample], tape: &mut Tape) -> Result<(f64, usize)> {
        tape.clear();
        let mut vars = ParamVars::new(&self.params);
        let mut watched = Vec::new();
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            losses.push(self.record_sample(tape, &mut vars, s, &mut watched)?);
        }
        let total = tape.sum(&losses);
        let scale = tape.constant(1.0 / batch.len() as f64);
        let mean = tape.mul(total, scale);
        tape.output(mean);
        let loss = tape.forward(&[], &self.params)?[0];
        let clamps = clamp_count(tape, &watched);
        if loss.is_finite() {
            tape.backward(&[1.0], &mut self.params)?;
        }
        Ok((loss, clamps))
    }

    /// One SGD step over `batch`; returns the mean loss and the clamp count.
    fn step(&mut self, batch: &[&Sample], tape: &mut Tape, sgd: &mut Sgd, config: &SgdConfig) -> Result<(f64, usize)> {
        let (loss, clamps) = self.loss_and_grad(batch, tape)?;
        if loss.is_finite() {
            sgd.step(&mut self.params, config);
        }
        Ok((loss, clamps))
    }

    /// Mean training loss over every sample of `data` and its gradient with
    /// respect to every parameter, indexed by [`ParamId`]. Registers missing
    /// embeddings; parameters are not changed.
    pub fn objective(&mut self, data: &DemonstrationSet) -> Result<(f64, Vec<f64>)> {
        self.ensure_training_embeddings(data);
        let mut samples = Vec::new();
        for s in &data.schedules {
            for o in &s.observations {
                samples.extend(self.observation_samples(self.owner(s.demonstrator_id), o, 1.0)?);
            }
        }
        let batch: Vec<&Sample> = samples.iter().collect();
        self.params.zero_grads();
        let (loss, _) = self.loss_and_grad(&batch, &mut Tape::new())?;
        let grads = self.params.iter().map(|(_, p)| p.grad).collect();
        self.params.zero_grads();
        Ok((loss, grads))
    }

    pub fn train(&mut self, data: &DemonstrationSet, config: &SgdConfig) -> Result<TrainReport> {
        let weights = vec![1.0; data.schedules.len()];
        self.train_weighted(data, &weights, config)
    }

    /// Trains `θ` and the embeddings of every demonstrator in `data`.
    /// Each schedule's samples are scaled by `weights[schedule]`.
    pub fn train_weighted(&mut self, data: &DemonstrationSet, weights: &[f64], config: &SgdConfig) -> Result<TrainReport> {
        config.validate()?;
        if weights.len() != data.schedules.len() {
            return Err(Error::WidthMismatch {
                expected: data.schedules.len(),
                got: weights.len(),
            });
        }
        self.ensure_training_embeddings(data);
        self.params.set_group_trainable(ParamGroup::Model, true);
        self.params.set_group_trainable(ParamGroup::Embedding, true);
        let mut samples = Vec::new();
        for (s, &w) in data.schedules.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            for o in &s.observations {
                samples.extend(self.observation_samples(self.owner(s.demonstrator_id), o, w)?);
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle = rng(derive(config.seed, 0x7a11));
        let mut sgd = Sgd::new();
        let mut tape = Tape::new();
        let mut report = TrainReport {
            loss_curve: Vec::with_capacity(config.epochs),
            clamp_events: 0,
            rejected_updates: 0,
        };
        let mut best: Option<(f64, ParamStore)> = None;
        for epoch in 0..config.epochs {
            order.shuffle(&mut shuffle);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (step, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let (loss, clamps) = self.step(&batch, &mut tape, &mut sgd, config)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { loss, epoch, step });
                }
                report.clamp_events += clamps;
                sum += loss * batch.len() as f64;
                count += batch.len();
            }
            let mean = sum / count as f64;
            if self.options.keep_best_epoch && best.as_ref().map_or(true, |(l, _)| mean < *l) {
                best = Some((mean, self.params.clone()));
            }
            report.loss_curve.push(mean);
        }
        if let Some((_, params)) = best {
            self.params = params;
            self.params.zero_grads();
        }
        report.rejected_updates = sgd.rejected();
        Ok(report)
    }

    fn input_for(&self, embedding: &[f64], features: Vec<f64>) -> Vec<f64> {
        let mut x = Vec::with_capacity(embedding.len() + features.len());
        x.extend_from_slice(embedding);
        x.extend(features);
        x
    }

    /// Class probabilities of the model for one full input vector.
    pub fn probs(&self, input: &[f64]) -> Vec<f64> {
        softmax(&self.arch.eval(&self.params, input))
    }

    /// Pairwise preference `f(a, b)` for one observation.
    pub fn pair_score(&self, obs: &Observation, embedding: &[f64], a: usize, b: usize) -> f64 {
        self.probs(&self.input_for(embedding, pair_features(obs, a, b)))[1]
    }

    /// Distribution over actions for `obs` under `embedding`.
    pub fn predict(&self, obs: &Observation, embedding: &[f64]) -> Result<ActionDistribution> {
        self.predict_using(obs, embedding, &|x| self.probs(x))
    }

    /// Same as [`predict`](Self::predict) with the class probabilities of
    /// each framed input supplied by `scorer`.
    pub fn predict_using(
        &self,
        obs: &Observation,
        embedding: &[f64],
        scorer: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> Result<ActionDistribution> {
        self.dims.check(obs)?;
        if embedding.len() != self.embedding_dim() {
            return Err(Error::WidthMismatch {
                expected: self.embedding_dim(),
                got: embedding.len(),
            });
        }
        predict_framed(obs, embedding, &self.options, scorer)
    }

    /// Embedding to use for a known demonstrator, or the mean for an unknown one.
    pub fn embedding_or_mean(&self, id: DemonstratorId) -> Vec<f64> {
        if !self.is_personalized() {
            return Vec::new();
        }
        self.embeddings
            .values(id, &self.params)
            .unwrap_or_else(|| self.mean_embedding())
    }

    /// Runs `f` with only `id`'s embedding trainable, restoring the flags after.
    fn with_only_embedding<T>(&mut self, id: DemonstratorId, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let saved: Vec<bool> = self.params.iter().map(|(_, p)| p.trainable).collect();
        let all: Vec<ParamId> = self.params.iter().map(|(i, _)| i).collect();
        for &p in &all {
            self.params.set_trainable(p, false);
        }
        for p in self.embeddings.params(id).unwrap_or(&[]).to_vec() {
            self.params.set_trainable(p, true);
        }
        let out = f(self);
        for (p, t) in all.into_iter().zip(saved) {
            self.params.set_trainable(p, t);
        }
        self.params.zero_grads();
        out
    }

    /// Registers (or resets) `id` at the mean training embedding.
    fn start_adaptation(&mut self, id: DemonstratorId) {
        let mean = self.mean_embedding();
        self.embeddings.set(id, &mean, &mut self.params);
    }

    fn adapt_steps(
        &mut self,
        id: DemonstratorId,
        observations: &[Observation],
        config: &SgdConfig,
        sgd: &mut Sgd,
        tape: &mut Tape,
    ) -> Result<()> {
        for o in observations {
            let samples = self.observation_samples(Some(id), o, 1.0)?;
            if samples.is_empty() {
                continue;
            }
            let batch: Vec<&Sample> = samples.iter().collect();
            let (loss, _) = self.step(&batch, tape, sgd, config)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch: 0, step: 0 });
            }
        }
        Ok(())
    }

    /// Infers the embedding of a new demonstrator from `observations` with `θ`
    /// frozen: starts at the mean training embedding and takes one SGD step
    /// per observation, in order, for `adapt.passes` passes.
    pub fn adapt_embedding(
        &mut self,
        id: DemonstratorId,
        observations: &[Observation],
        adapt: &AdaptConfig,
    ) -> Result<Embedding> {
        let config = adapt.sgd()?;
        if !self.is_personalized() {
            return Ok(Embedding {
                owner: Owner::Demonstrator(id),
                values: Vec::new(),
            });
        }
        self.start_adaptation(id);
        if !observations.is_empty() {
            self.with_only_embedding(id, |m| {
                let mut sgd = Sgd::new();
                let mut tape = Tape::new();
                for _ in 0..adapt.passes {
                    m.adapt_steps(id, observations, &config, &mut sgd, &mut tape)?;
                }
                Ok(())
            })?;
        }
        Ok(self.embedding(id).expect("embedding registered"))
    }

    /// Predicts every decision of `schedule` for a demonstrator unseen in
    /// training, adapting its embedding per `adapt`.
    pub fn evaluate_schedule(&mut self, schedule: &Schedule, adapt: &AdaptConfig) -> Result<ScheduleEval> {
        self.evaluate_schedule_using(schedule, adapt, None)
    }

    /// Embedding in force before each decision of `schedule` under `adapt`,
    /// plus the final one. Online, decision `t` sees the embedding adapted on
    /// decisions before `t`; in batch mode every decision sees the embedding
    /// adapted on the whole schedule.
    pub fn embedding_trajectory(
        &mut self,
        schedule: &Schedule,
        adapt: &AdaptConfig,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let config = adapt.sgd()?;
        let id = schedule.demonstrator_id;
        let obs = &schedule.observations;
        if !self.is_personalized() {
            return Ok((vec![Vec::new(); obs.len()], Vec::new()));
        }
        match adapt.mode {
            AdaptMode::Batch => {
                let e = self.adapt_embedding(id, obs, adapt)?;
                Ok((vec![e.values.clone(); obs.len()], e.values))
            }
            AdaptMode::Online => {
                self.start_adaptation(id);
                let mut seen = Vec::with_capacity(obs.len());
                self.with_only_embedding(id, |m| {
                    let mut sgd = Sgd::new();
                    let mut tape = Tape::new();
                    for o in obs {
                        seen.push(m.embeddings.values(id, &m.params).unwrap());
                        m.adapt_steps(id, std::slice::from_ref(o), &config, &mut sgd, &mut tape)?;
                    }
                    Ok(())
                })?;
                Ok((seen, self.embeddings.values(id, &self.params).unwrap()))
            }
        }
    }

    /// As [`evaluate_schedule`](Self::evaluate_schedule), predicting with
    /// `scorer` when given. The embedding is still adapted through the model.
    pub fn evaluate_schedule_using(
        &mut self,
        schedule: &Schedule,
        adapt: &AdaptConfig,
        scorer: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    ) -> Result<ScheduleEval> {
        let obs = &schedule.observations;
        let (trajectory, embedding) = self.embedding_trajectory(schedule, adapt)?;
        let mut predictions = Vec::with_capacity(obs.len());
        let mut loss = 0.0;
        for (o, e) in obs.iter().zip(&trajectory) {
            let d = match scorer {
                Some(f) => self.predict_using(o, e, f)?,
                None => self.predict(o, e)?,
            };
            loss += decision_loss(&d, o, self.options.alpha)?;
            predictions.push(d.argmax());
        }
        let correct = predictions
            .iter()
            .zip(obs)
            .filter(|(p, o)| o.taken_actions.contains(p))
            .count();
        Ok(ScheduleEval {
            predictions,
            correct,
            total: obs.len(),
            loss: if obs.is_empty() { 0.0 } else { loss / obs.len() as f64 },
            embedding,
        })
    }

    /// Top-1 accuracy on observations of demonstrators whose embedding is
    /// already known (training demonstrators).
    pub fn accuracy_with_known_embeddings(&self, data: &DemonstrationSet) -> Result<f64> {
        let mut correct = 0;
        let mut total = 0;
        for s in &data.schedules {
            let e = self.embedding_or_mean(s.demonstrator_id);
            for o in &s.observations {
                let p = self.predict(o, &e)?.argmax();
                correct += usize::from(o.taken_actions.contains(&p));
                total += 1;
            }
        }
        Ok(correct as f64 / total.max(1) as f64)
    }
}

/// Names of the framed input features under `options`, embedding
/// coordinates first.
pub fn feature_names(dims: FeatureDims, options: &LearnerOptions) -> Vec<String> {
    let mut names: Vec<String> = (0..options.embedding_dim).map(|k| format!("omega_{k}")).collect();
    names.extend((0..dims.context_dim).map(|k| format!("context_{k}")));
    match options.framing {
        Framing::Pairwise => names.extend((0..dims.action_dim).map(|k| format!("diff_{k}"))),
        Framing::Pointwise => names.extend((0..dims.action_dim).map(|k| format!("action_{k}"))),
        Framing::Standard => {
            for a in 0..dims.action_count {
                names.extend((0..dims.action_dim).map(|k| format!("a{a}_{k}")));
            }
        }
    }
    names
}

fn candidates(obs: &Observation, options: &LearnerOptions) -> Vec<usize> {
    if options.pair.available_only {
        obs.available_actions()
    } else {
        (0..obs.action_count()).collect()
    }
}

fn prefixed(prefix: &[f64], features: Vec<f64>) -> Vec<f64> {
    let mut x = Vec::with_capacity(prefix.len() + features.len());
    x.extend_from_slice(prefix);
    x.extend(features);
    x
}

/// Distribution over the candidate actions of `obs` under `options`'
/// framing. Every framed input is `prefix ‖ features` and `scorer` returns
/// its class probabilities.
pub fn predict_framed(
    obs: &Observation,
    prefix: &[f64],
    options: &LearnerOptions,
    scorer: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<ActionDistribution> {
    let cands = candidates(obs, options);
    if cands.is_empty() {
        return Err(Error::InvalidArgument("no candidate actions".into()));
    }
    let n = obs.action_count();
    Ok(match options.framing {
        Framing::Pairwise => {
            let scores: Vec<Vec<f64>> = cands
                .iter()
                .map(|&a| {
                    cands
                        .iter()
                        .map(|&b| {
                            if a == b && !options.include_self {
                                0.0
                            } else {
                                scorer(&prefixed(prefix, pair_features(obs, a, b)))[1]
                            }
                        })
                        .collect()
                })
                .collect();
            marginalize(n, &cands, &scores, options.include_self)
        }
        Framing::Pointwise => {
            let scores: Vec<f64> = cands
                .iter()
                .map(|&a| scorer(&prefixed(prefix, point_features(obs, a)))[1])
                .collect();
            normalize_scores(n, &cands, &scores)
        }
        Framing::Standard => {
            let p = scorer(&prefixed(prefix, standard_features(obs)));
            let p: Vec<f64> = cands.iter().map(|&a| p[a]).collect();
            normalize_scores(n, &cands, &p)
        }
    })
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

/// Divergence between the (normalized) taken set and a predicted distribution.
pub fn decision_loss(d: &ActionDistribution, obs: &Observation, alpha: f64) -> Result<f64> {
    let mut target = vec![0.0; d.probs.len()];
    for &a in &obs.taken_actions {
        target[a] = 1.0;
    }
    Ok(renyi_loss(&d.probs, &target, alpha)?.value)
}

impl TrainReport {
    /// Training loss of the parameters the model ends up with.
    pub fn final_loss(&self, kept_best: bool) -> f64 {
        if kept_best {
            self.loss_curve.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            self.loss_curve.last().copied().unwrap_or(f64::INFINITY)
        }
    }
}

/// Trains `restarts` models built by `make(r)` for `r = 0..restarts` and
/// keeps the one with the lowest training loss.
pub fn train_with_restarts<A: Architecture>(
    make: impl Fn(u64) -> PersonalizedModel<A>,
    data: &DemonstrationSet,
    config: &SgdConfig,
    restarts: usize,
) -> Result<(PersonalizedModel<A>, TrainReport)> {
    let mut best: Option<(f64, PersonalizedModel<A>, TrainReport)> = None;
    for r in 0..restarts.max(1) as u64 {
        let mut model = make(r);
        let report = model.train(data, config)?;
        let loss = report.final_loss(model.options.keep_best_epoch);
        log::debug!("restart {r}: training loss {loss:.5}");
        if best.as_ref().map_or(true, |(l, _, _)| loss < *l) {
            best = Some((loss, model, report));
        }
    }
    let (_, model, report) = best.expect("at least one restart");
    Ok((model, report))
}

/// Writes `model` as a header line followed by one JSON document.
pub fn save_checkpoint<T: Serialize>(model: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{CHECKPOINT_HEADER}")?;
    serde_json::to_writer(&mut w, model)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    if header.trim_end() != CHECKPOINT_HEADER {
        return Err(Error::SchemaVersion(header.trim_end().to_string()));
    }
    Ok(serde_json::from_reader(r)?)
}
