//! Comparison methods: non-personalized learners, cluster-then-learn
//! models, an EM-trained decision tree with a latent mode, and a decision
//! tree trained on embeddings inferred by a personalized network.

pub mod cart;
pub mod cluster;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemonstrationSet, Observation, Schedule};
use crate::diffcore::SgdConfig;
use crate::error::{Error, Result};
use crate::pairwise::{pair_features, pair_indices, point_features, standard_features, ActionDistribution, Framing};
use crate::pddt::{PddtModel, TreeConfig};
use crate::pnn::{
    decision_loss, feature_names, predict_framed, AdaptConfig, AdaptMode, FeatureDims, LearnerOptions, MlpConfig, PnnModel,
    ScheduleEval,
};
use crate::rng::{derive, rng};

pub use cart::{fit_cart, CartConfig, CartNode, CartTree};
pub use cluster::{fit_gmm, fit_kmeans, Gmm, GmmFit, KMeans, KMeansFit};

/// Options with personalization switched off.
fn without_embedding(options: &LearnerOptions) -> LearnerOptions {
    LearnerOptions {
        embedding_dim: 0,
        ..options.clone()
    }
}

/// Network without a demonstrator embedding.
pub fn plain_nn(dims: FeatureDims, options: &LearnerOptions, config: &MlpConfig, seed: u64) -> PnnModel {
    PnnModel::mlp(dims, without_embedding(options), config, seed)
}

/// Differentiable tree without a demonstrator embedding.
pub fn plain_ddt(dims: FeatureDims, options: &LearnerOptions, config: &TreeConfig, seed: u64) -> PddtModel {
    PddtModel::tree(dims, without_embedding(options), config, seed)
}

/// Scores the predictions of `predict(t, obs)` over a schedule.
fn score_schedule(
    schedule: &Schedule,
    alpha: f64,
    mut predict: impl FnMut(usize, &Observation) -> Result<ActionDistribution>,
) -> Result<ScheduleEval> {
    let mut predictions = Vec::with_capacity(schedule.observations.len());
    let mut loss = 0.0;
    for (t, o) in schedule.observations.iter().enumerate() {
        let d = predict(t, o)?;
        loss += decision_loss(&d, o, alpha)?;
        predictions.push(d.argmax());
    }
    let total = predictions.len();
    let correct = predictions
        .iter()
        .zip(&schedule.observations)
        .filter(|(p, o)| o.taken_actions.contains(p))
        .count();
    Ok(ScheduleEval {
        predictions,
        correct,
        total,
        loss: if total == 0 { 0.0 } else { loss / total as f64 },
        embedding: Vec::new(),
    })
}

/// Labelled inputs of one observation under `options`' framing, each
/// prefixed with `prefix`. Standard framing labels are action ids.
fn framed_examples(obs: &Observation, prefix: &[f64], options: &LearnerOptions) -> Result<Vec<(Vec<f64>, usize)>> {
    let with = |f: Vec<f64>| {
        let mut x = prefix.to_vec();
        x.extend(f);
        x
    };
    Ok(match options.framing {
        Framing::Pairwise => pair_indices(obs, options.pair)?
            .into_iter()
            .map(|(a, b, y)| (with(pair_features(obs, a, b)), usize::from(y)))
            .collect(),
        Framing::Pointwise => {
            let cands = if options.pair.available_only {
                obs.available_actions()
            } else {
                (0..obs.action_count()).collect()
            };
            cands
                .into_iter()
                .map(|a| (with(point_features(obs, a)), usize::from(obs.taken_actions.contains(&a))))
                .collect()
        }
        Framing::Standard => obs
            .taken_actions
            .iter()
            .map(|&a| (with(standard_features(obs)), a))
            .collect(),
    })
}

fn class_count(options: &LearnerOptions, action_count: usize) -> usize {
    match options.framing {
        Framing::Standard => action_count,
        Framing::Pairwise | Framing::Pointwise => 2,
    }
}

/// CART on framed inputs. `prefix(schedule)` is prepended to every input
/// of that schedule.
fn fit_framed_cart(
    data: &DemonstrationSet,
    options: &LearnerOptions,
    config: &CartConfig,
    mut prefix: impl FnMut(usize, &Schedule) -> Vec<f64>,
) -> Result<CartTree> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, s) in data.schedules.iter().enumerate() {
        let p = prefix(i, s);
        for o in &s.observations {
            for (f, label) in framed_examples(o, &p, options)? {
                x.push(f);
                y.push(label);
            }
        }
    }
    fit_cart(&x, &y, class_count(options, data.action_count), config)
}

/// Decision tree without personalization. Leaf class frequencies serve
/// as probabilities in the pairwise and pointwise framings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtModel {
    pub tree: CartTree,
    pub options: LearnerOptions,
    pub dims: FeatureDims,
}

pub fn fit_dt(data: &DemonstrationSet, options: &LearnerOptions, config: &CartConfig) -> Result<DtModel> {
    let options = without_embedding(options);
    let tree = fit_framed_cart(data, &options, config, |_, _| Vec::new())?;
    Ok(DtModel {
        tree,
        options,
        dims: FeatureDims::of(data),
    })
}

impl DtModel {
    pub fn feature_names(&self) -> Vec<String> {
        feature_names(self.dims, &self.options)
    }

    pub fn predict(&self, obs: &Observation) -> Result<ActionDistribution> {
        predict_framed(obs, &[], &self.options, &|x| self.tree.probs(x))
    }

    pub fn evaluate_schedule(&self, schedule: &Schedule) -> Result<ScheduleEval> {
        score_schedule(schedule, self.options.alpha, |_, o| self.predict(o))
    }
}

/// Decision tree over `ω ‖ inputs`, where `ω` comes from a trained
/// personalized network: the learned embedding for training demonstrators
/// and the adapted one for new demonstrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtOnEmbeddings {
    pub tree: CartTree,
    pub options: LearnerOptions,
    pub pnn: PnnModel,
}

pub fn fit_dt_on_pnn_embeddings(
    pnn: &PnnModel,
    data: &DemonstrationSet,
    framing: Framing,
    config: &CartConfig,
) -> Result<DtOnEmbeddings> {
    if !pnn.is_personalized() {
        return Err(Error::InvalidArgument("network has no demonstrator embeddings".into()));
    }
    let options = LearnerOptions {
        framing,
        embedding_dim: pnn.embedding_dim(),
        ..pnn.options.clone()
    };
    let tree = fit_framed_cart(data, &options, config, |_, s| {
        pnn.embedding(s.demonstrator_id)
            .map(|e| e.values)
            .unwrap_or_else(|| pnn.mean_embedding())
    })?;
    Ok(DtOnEmbeddings {
        tree,
        options,
        pnn: pnn.clone(),
    })
}

impl DtOnEmbeddings {
    pub fn feature_names(&self) -> Vec<String> {
        feature_names(self.pnn.dims, &self.options)
    }

    /// The network infers the demonstrator's embedding as it would for its
    /// own predictions under `adapt`, and the tree predicts each decision
    /// from the embedding in force at that point.
    pub fn evaluate_schedule(&self, schedule: &Schedule, adapt: &AdaptConfig) -> Result<ScheduleEval> {
        let mut pnn = self.pnn.clone();
        let (trajectory, last) = pnn.embedding_trajectory(schedule, adapt)?;
        let mut eval = score_schedule(schedule, self.options.alpha, |t, o| {
            predict_framed(o, &trajectory[t], &self.options, &|x| self.tree.probs(x))
        })?;
        eval.embedding = last;
        Ok(eval)
    }
}

/// Per-demonstrator summary: mean feature vector of the chosen actions
/// followed by the normalized histogram of chosen action ids. `None` when
/// no decision has been seen.
pub fn demonstrator_summary(observations: &[Observation], action_count: usize) -> Option<Vec<f64>> {
    let first = observations.first()?;
    let dim = first.action_features.first().map_or(0, |f| f.len());
    let mut mean = vec![0.0; dim];
    let mut hist = vec![0.0; action_count];
    let mut n = 0.0;
    for o in observations {
        for &a in &o.taken_actions {
            for (m, v) in mean.iter_mut().zip(&o.action_features[a]) {
                *m += v;
            }
            hist[a] += 1.0;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return None;
    }
    mean.extend(hist);
    Some(mean.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Clustering {
    Kmeans(KMeans),
    Gmm(Gmm),
}

impl Clustering {
    pub fn k(&self) -> usize {
        match self {
            Clustering::Kmeans(m) => m.centroids.len(),
            Clustering::Gmm(m) => m.k(),
        }
    }

    pub fn assign(&self, summary: &[f64]) -> usize {
        match self {
            Clustering::Kmeans(m) => m.assign(summary),
            Clustering::Gmm(m) => m.assign(summary),
        }
    }
}

/// Demonstrators grouped by behaviour, one network per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub method: ClusterMethod,
    pub clustering: Clustering,
    pub models: Vec<PnnModel>,
    /// Cluster used before any decision of a new demonstrator is seen.
    pub default_cluster: usize,
    /// Schedules (kmeans) or responsibility mass (gmm) per cluster.
    pub cluster_sizes: Vec<f64>,
    pub action_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSettings {
    pub method: ClusterMethod,
    pub k: usize,
    pub options: LearnerOptions,
    pub mlp: MlpConfig,
    pub sgd: SgdConfig,
    pub seed: u64,
}

fn subset(data: &DemonstrationSet, keep: impl Fn(usize) -> bool) -> DemonstrationSet {
    let mut out = data.clone();
    out.schedules = data
        .schedules
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, s)| s.clone())
        .collect();
    out
}

/// Clusters demonstrators on their summaries and trains one network per
/// cluster. k-means clusters train on their own schedules; mixture
/// components train on every schedule weighted by responsibility.
pub fn fit_clustered(data: &DemonstrationSet, settings: &ClusterSettings) -> Result<ClusterModel> {
    let summaries: Vec<Vec<f64>> = data
        .schedules
        .iter()
        .map(|s| {
            demonstrator_summary(&s.observations, data.action_count)
                .ok_or_else(|| Error::InvalidArgument(format!("schedule of {} is empty", s.demonstrator_id)))
        })
        .collect::<Result<_>>()?;
    let dims = FeatureDims::of(data);
    let seed = settings.seed;
    let network = |c: usize| plain_nn(dims, &settings.options, &settings.mlp, seed.wrapping_add(c as u64));
    let (clustering, weights): (Clustering, Vec<Vec<f64>>) = match settings.method {
        ClusterMethod::Kmeans => {
            let fit = fit_kmeans(&summaries, settings.k, 100, derive(seed, 0xc1))?;
            let k = fit.model.centroids.len();
            let w = (0..k)
                .map(|c| fit.assignments.iter().map(|&a| f64::from(u8::from(a == c))).collect())
                .collect();
            (Clustering::Kmeans(fit.model), w)
        }
        ClusterMethod::Gmm => {
            let fit = fit_gmm(&summaries, settings.k, 100, derive(seed, 0xc1))?;
            let k = fit.model.k();
            let w = (0..k)
                .map(|c| fit.responsibilities.iter().map(|r| r[c]).collect())
                .collect();
            (Clustering::Gmm(fit.model), w)
        }
    };
    if clustering.k() < settings.k {
        log::info!("clustering: k reduced from {} to {}", settings.k, clustering.k());
    }
    let mut models = Vec::with_capacity(weights.len());
    let mut cluster_sizes = Vec::with_capacity(weights.len());
    for (c, w) in weights.iter().enumerate() {
        let mut m = network(c);
        match settings.method {
            ClusterMethod::Kmeans => {
                m.train(&subset(data, |i| w[i] > 0.0), &settings.sgd)?;
            }
            ClusterMethod::Gmm => {
                m.train_weighted(data, w, &settings.sgd)?;
            }
        }
        models.push(m);
        cluster_sizes.push(w.iter().sum());
    }
    let mut default_cluster = 0;
    for (c, &n) in cluster_sizes.iter().enumerate() {
        if n > cluster_sizes[default_cluster] {
            default_cluster = c;
        }
    }
    Ok(ClusterModel {
        method: settings.method,
        clustering,
        models,
        default_cluster,
        cluster_sizes,
        action_count: data.action_count,
    })
}

impl ClusterModel {
    /// Cluster of a demonstrator given the decisions seen so far.
    pub fn route(&self, seen: &[Observation]) -> usize {
        demonstrator_summary(seen, self.action_count).map_or(self.default_cluster, |s| self.clustering.assign(&s))
    }

    /// Online: decision `t` is routed on the decisions before it. Batch:
    /// the whole schedule is routed once.
    pub fn evaluate_schedule(&self, schedule: &Schedule, mode: AdaptMode) -> Result<ScheduleEval> {
        let obs = &schedule.observations;
        let whole = self.route(obs);
        let alpha = self.models[0].options.alpha;
        score_schedule(schedule, alpha, |t, o| {
            let c = match mode {
                AdaptMode::Online => self.route(&obs[..t]),
                AdaptMode::Batch => whole,
            };
            self.models[c].predict(o, &[])
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmDtConfig {
    pub modes: usize,
    pub iterations: usize,
    pub cart: CartConfig,
    pub framing: Framing,
    pub seed: u64,
}

impl Default for EmDtConfig {
    fn default() -> Self {
        Self {
            modes: 2,
            iterations: 20,
            cart: CartConfig::default(),
            framing: Framing::Standard,
            seed: 1,
        }
    }
}

/// Decision tree over `onehot(mode) ‖ inputs` with a latent mode per schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmDtModel {
    pub tree: CartTree,
    pub options: LearnerOptions,
    pub dims: FeatureDims,
    pub modes: usize,
    /// Mode distribution of each training schedule.
    pub mode_probs: Vec<Vec<f64>>,
    /// Most probable mode of each training schedule.
    pub assignments: Vec<usize>,
    /// Assignments stopped changing before the iteration cap.
    pub converged: bool,
    /// Iteration whose tree was kept (the best training accuracy).
    pub best_iteration: usize,
}

/// Index drawn from the distribution `p` with the uniform draw `u`.
fn sample_index(p: &[f64], mut u: f64) -> usize {
    for (m, &q) in p.iter().enumerate() {
        if u < q {
            return m;
        }
        u -= q;
    }
    p.len() - 1
}

fn one_hot(mode: usize, modes: usize) -> Vec<f64> {
    (0..modes).map(|m| f64::from(u8::from(m == mode))).collect()
}

fn correct_under(tree: &CartTree, options: &LearnerOptions, obs: &[Observation], mode: usize, modes: usize) -> Result<usize> {
    let prefix = one_hot(mode, modes);
    let mut n = 0;
    for o in obs {
        let d = predict_framed(o, &prefix, options, &|x| tree.probs(x))?;
        n += usize::from(o.taken_actions.contains(&d.argmax()));
    }
    Ok(n)
}

/// Mode with the most correct predictions on `obs`, lowest on ties.
fn best_mode(tree: &CartTree, options: &LearnerOptions, obs: &[Observation], modes: usize) -> Result<(usize, Vec<usize>)> {
    let counts: Vec<usize> = (0..modes)
        .map(|m| correct_under(tree, options, obs, m, modes))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (m, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = m;
        }
    }
    Ok((best, counts))
}

/// Alternates between fitting a tree on inputs tagged with a sampled mode
/// and re-scoring each schedule's modes by the tree's accuracy. A schedule's
/// mode distribution is proportional to `exp(correct decisions)`.
pub fn fit_em_dt(data: &DemonstrationSet, options: &LearnerOptions, config: &EmDtConfig) -> Result<EmDtModel> {
    if config.modes == 0 {
        return Err(Error::Config("modes must be at least 1".into()));
    }
    let options = LearnerOptions {
        framing: config.framing,
        embedding_dim: config.modes,
        ..options.clone()
    };
    let k = config.modes;
    let n = data.schedules.len();
    let total = data.observation_count().max(1) as f64;
    let mut probs = vec![vec![1.0 / k as f64; k]; n];
    let mut previous: Option<Vec<usize>> = None;
    let mut best: Option<(f64, EmDtModel)> = None;
    let mut converged = false;
    for it in 0..config.iterations.max(1) {
        let mut r = rng(derive(config.seed, it as u64));
        let sampled: Vec<usize> = probs.iter().map(|p| sample_index(p, r.gen())).collect();
        let tree = fit_framed_cart(data, &options, &config.cart, |i, _| one_hot(sampled[i], k))?;
        let mut assignments = Vec::with_capacity(n);
        let mut correct = 0usize;
        for (i, s) in data.schedules.iter().enumerate() {
            let (m, counts) = best_mode(&tree, &options, &s.observations, k)?;
            let top = counts[m] as f64;
            let w: Vec<f64> = counts.iter().map(|&c| (c as f64 - top).exp()).collect();
            let z: f64 = w.iter().sum();
            probs[i] = w.into_iter().map(|v| v / z).collect();
            correct += counts[m];
            assignments.push(m);
        }
        let score = correct as f64 / total;
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((
                score,
                EmDtModel {
                    tree,
                    options: options.clone(),
                    dims: FeatureDims::of(data),
                    modes: k,
                    mode_probs: probs.clone(),
                    assignments: assignments.clone(),
                    converged: false,
                    best_iteration: it,
                },
            ));
        }
        if previous.as_ref() == Some(&assignments) {
            converged = true;
            break;
        }
        previous = Some(assignments);
    }
    let (_, mut model) = best.expect("at least one iteration");
    model.converged = converged;
    if !converged {
        log::warn!("em-dt: assignments still changing after {} iterations", config.iterations);
    }
    Ok(model)
}

impl EmDtModel {
    /// Tree input names; the one-hot mode comes first as `mode_k`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = feature_names(self.dims, &self.options);
        for (k, n) in names.iter_mut().take(self.modes).enumerate() {
            *n = format!("mode_{k}");
        }
        names
    }

    /// Mode distribution of a new demonstrator after `seen`, proportional to
    /// `exp(correct decisions)` as in training. Uniform when nothing is seen.
    pub fn mode_distribution(&self, seen: &[Observation]) -> Result<Vec<f64>> {
        let (m, counts) = best_mode(&self.tree, &self.options, seen, self.modes)?;
        let top = counts[m] as f64;
        let w: Vec<f64> = counts.iter().map(|&c| (c as f64 - top).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / z).collect())
    }

    /// Most probable mode after `seen`, lowest on ties.
    pub fn infer_mode(&self, seen: &[Observation]) -> Result<usize> {
        Ok(best_mode(&self.tree, &self.options, seen, self.modes)?.0)
    }

    pub fn predict(&self, obs: &Observation, mode: usize) -> Result<ActionDistribution> {
        predict_framed(obs, &one_hot(mode, self.modes), &self.options, &|x| self.tree.probs(x))
    }

    /// Each decision is predicted with a mode sampled from the demonstrator's
    /// mode distribution: over the decisions before it when online, over the
    /// whole schedule in batch mode. `seed` fixes the draws.
    pub fn evaluate_schedule(&self, schedule: &Schedule, mode: AdaptMode, seed: u64) -> Result<ScheduleEval> {
        let obs = &schedule.observations;
        let whole = self.mode_distribution(obs)?;
        let mut r = rng(derive(seed, u64::from(schedule.demonstrator_id.0)));
        score_schedule(schedule, self.options.alpha, |t, o| {
            let q = match mode {
                AdaptMode::Online => self.mode_distribution(&obs[..t])?,
                AdaptMode::Batch => whole.clone(),
            };
            self.predict(o, sample_index(&q, r.gen()))
        })
    }

    /// Demonstrators of the training set per mode.
    pub fn mode_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.modes];
        for &m in &self.assignments {
            out[m] += 1;
        }
        out
    }
}

/// Accuracy of `eval` over every schedule of `data`.
pub fn accuracy(data: &DemonstrationSet, mut eval: impl FnMut(&Schedule) -> Result<ScheduleEval>) -> Result<f64> {
    let mut correct = 0;
    let mut total = 0;
    for s in &data.schedules {
        let e = eval(s)?;
        correct += e.correct;
        total += e.total;
    }
    Ok(correct as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests;
