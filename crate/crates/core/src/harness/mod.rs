//! Experiment runner: configuration, training and evaluation of every model
//! family, metric reports, comparisons and plot tables.

mod report;
mod run;

use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::CartConfig;
use crate::diffcore::SgdConfig;
use crate::envs::{BetaSampler, LowDimConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::pairwise::Framing;
use crate::pddt::TreeConfig;
use crate::pnn::{AdaptConfig, AdaptMode, LearnerOptions, MlpConfig};

pub use report::{compare, emit_plot_data, read_plot_data, PlotRow, RankRow, Ranking, SeedResult, MetricsReport, PLOT_COLUMNS};
pub use run::{generate, run, run_cached, seed_data, train_seed, Evaluation, ModelCache, SeedData, TrainedModel};

/// Environment variable naming the directory runs write into.
pub const OUTPUT_ROOT_VAR: &str = "APPRENTICE_OUTPUT";

pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("APPRENTICE_GIT_DESCRIBE"))
}

/// Directory for run outputs: `$APPRENTICE_OUTPUT`, else `./runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Lowdim,
    Scheduling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pnn,
    Pddt,
    Nn,
    Ddt,
    Dt,
    KmeansNn,
    GmmNn,
    EmDt,
    DtPnnEmb,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Pnn,
        ModelKind::Pddt,
        ModelKind::Nn,
        ModelKind::Ddt,
        ModelKind::Dt,
        ModelKind::KmeansNn,
        ModelKind::GmmNn,
        ModelKind::EmDt,
        ModelKind::DtPnnEmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pnn => "pnn",
            ModelKind::Pddt => "pddt",
            ModelKind::Nn => "nn",
            ModelKind::Ddt => "ddt",
            ModelKind::Dt => "dt",
            ModelKind::KmeansNn => "kmeans-nn",
            ModelKind::GmmNn => "gmm-nn",
            ModelKind::EmDt => "em-dt",
            ModelKind::DtPnnEmb => "dt-pnn-emb",
        }
    }

    /// Models whose predictions come from CART leaf counts.
    pub fn is_cart(self) -> bool {
        matches!(self, ModelKind::Dt | ModelKind::EmDt | ModelKind::DtPnnEmb)
    }

    pub fn default_framing(self) -> Framing {
        if self.is_cart() {
            Framing::Standard
        } else {
            Framing::Pairwise
        }
    }

    fn personalized(self) -> bool {
        matches!(self, ModelKind::Pnn | ModelKind::Pddt | ModelKind::DtPnnEmb)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Every tunable of a run. Defaults depend on the domain and the model;
/// the `hyper` table of a config overrides them key by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub learner: LearnerOptions,
    pub sgd: SgdConfig,
    pub adapt: AdaptConfig,
    pub mlp: MlpConfig,
    pub tree: TreeConfig,
    /// Random restarts of the differentiable tree; the lowest training loss wins.
    pub restarts: usize,
    pub cart: CartConfig,
    pub clusters: usize,
    pub em_modes: usize,
    pub em_iterations: usize,
    pub lowdim: LowDimConfig,
    pub scenario: ScenarioConfig,
    pub sampler: BetaSampler,
}

impl Hyper {
    pub fn defaults(domain: Domain, model: ModelKind) -> Self {
        let tree_model = matches!(model, ModelKind::Pddt | ModelKind::Ddt);
        let mut h = Hyper {
            learner: LearnerOptions::default(),
            sgd: SgdConfig::default(),
            adapt: AdaptConfig::default(),
            mlp: MlpConfig::default(),
            tree: TreeConfig::default(),
            restarts: 1,
            cart: CartConfig::default(),
            clusters: 2,
            em_modes: 2,
            em_iterations: 20,
            lowdim: LowDimConfig::default(),
            scenario: ScenarioConfig::default(),
            sampler: BetaSampler::default(),
        };
        match domain {
            Domain::Lowdim => {
                h.learner.embedding_dim = 2;
                h.sgd.epochs = 40;
                if tree_model {
                    h.sgd.epochs = 100;
                    h.sgd.learning_rate_model = 0.1;
                    h.learner.keep_best_epoch = true;
                    h.restarts = 3;
                }
            }
            Domain::Scheduling => {
                h.learner.embedding_dim = 3;
                h.sgd.epochs = 20;
                h.adapt.mode = AdaptMode::Batch;
                if tree_model {
                    h.sgd.epochs = 40;
                    h.sgd.learning_rate_model = 0.1;
                    h.learner.keep_best_epoch = true;
                    h.restarts = 2;
                }
            }
        }
        h
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub domain: Domain,
    pub model: ModelKind,
    /// Defaults to standard for tree baselines, pairwise otherwise.
    #[serde(default)]
    pub framing: Option<Framing>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Schedules generated per seed; 50 for lowdim, 150 for scheduling.
    #[serde(default)]
    pub schedules: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Allow leaf class frequencies of a CART model to stand in for
    /// pairwise or pointwise probabilities.
    #[serde(default)]
    pub calibrated_probabilities: bool,
    /// Overrides of [`Hyper`], merged key by key.
    #[serde(default)]
    pub hyper: Value,
    /// Load demonstrations from this file instead of generating them.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Recursively overlays `over` on `base`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) if !o.is_null() => *b = o.clone(),
        _ => {}
    }
}

/// Sets the dotted `path` of `root` to `value`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let Value::Object(map) = cur else {
            return Err(Error::Config(format!("`{path}`: `{p}` is inside a non-table value")));
        };
        if i + 1 == parts.len() {
            map.insert(p.to_string(), value);
            return Ok(());
        }
        cur = map.entry(p.to_string()).or_insert(Value::Null);
    }
    Err(Error::Config(format!("empty override path `{path}`")))
}

/// Parses the right-hand side of a `key=value` override: JSON when it
/// parses, a plain string otherwise.
pub fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn fnv_hex(bytes: &[u8]) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

impl ExperimentConfig {
    pub fn new(domain: Domain, model: ModelKind) -> Self {
        Self {
            name: None,
            domain,
            model,
            framing: None,
            seeds: default_seeds(),
            schedules: None,
            train_fraction: default_train_fraction(),
            calibrated_probabilities: false,
            hyper: Value::Null,
            dataset: None,
            output_dir: None,
        }
    }

    /// Parses and validates a config. `.toml` files are read as TOML,
    /// anything else as JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let toml = path.extension().is_some_and(|e| e == "toml");
        Self::parse(&text, toml)
    }

    pub fn parse(text: &str, toml: bool) -> Result<Self> {
        let config: Self = if toml {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Applies a `dotted.key=value` override to the config.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut v = serde_json::to_value(&*self)?;
        set_path(&mut v, key.trim(), override_value(raw.trim()))?;
        *self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        self.validate()
    }

    pub fn framing(&self) -> Framing {
        self.framing.unwrap_or_else(|| self.model.default_framing())
    }

    pub fn schedule_count(&self) -> usize {
        self.schedules.unwrap_or(match self.domain {
            Domain::Lowdim => 50,
            Domain::Scheduling => 150,
        })
    }

    /// Defaults for the domain and model with the `hyper` overrides applied.
    /// The learner framing follows the config's framing except for the
    /// embedding tree, whose network keeps its own.
    pub fn resolved(&self) -> Result<Hyper> {
        let mut v = serde_json::to_value(Hyper::defaults(self.domain, self.model))?;
        merge(&mut v, &self.hyper);
        let mut h: Hyper = serde_json::from_value(v).map_err(|e| Error::Config(format!("hyper: {e}")))?;
        if self.model != ModelKind::DtPnnEmb {
            h.learner.framing = self.framing();
        }
        if !self.model.personalized() {
            h.learner.embedding_dim = 0;
        }
        Ok(h)
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.model.name(), framing_name(self.framing())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if self.dataset.is_none() && self.schedule_count() < 2 {
            return bad("at least two schedules are needed to split".into());
        }
        let framing = self.framing();
        if self.model.is_cart() && framing != Framing::Standard && !self.calibrated_probabilities {
            return bad(format!(
                "{} with {} framing needs calibrated_probabilities = true",
                self.model.name(),
                framing_name(framing)
            ));
        }
        let h = self.resolved()?;
        if self.model.personalized() && h.learner.embedding_dim == 0 {
            return bad(format!("{} needs learner.embedding_dim >= 1", self.model.name()));
        }
        if matches!(self.model, ModelKind::KmeansNn | ModelKind::GmmNn) && h.clusters == 0 {
            return bad("clusters must be at least 1".into());
        }
        if self.model == ModelKind::EmDt && h.em_modes == 0 {
            return bad("em_modes must be at least 1".into());
        }
        if matches!(self.model, ModelKind::Pddt | ModelKind::Ddt) && h.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if h.learner.pair.multi_label && framing == Framing::Pairwise && self.model.is_cart() {
            return bad("multi-label pairwise targets need a differentiable model".into());
        }
        h.sgd.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of the whole config with resolved hyperparameters.
    pub fn fingerprint(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.insert("hyper".into(), serde_json::to_value(self.resolved()?)?);
            m.remove("output_dir");
        }
        Ok(fnv_hex(v.to_string().as_bytes()))
    }

    /// Hash of everything that determines the train/test data.
    pub fn dataset_fingerprint(&self) -> Result<String> {
        let h = self.resolved()?;
        let source = match &self.dataset {
            Some(p) => Value::String(fnv_hex(&std::fs::read(p)?)),
            None => match self.domain {
                Domain::Lowdim => serde_json::to_value(&h.lowdim)?,
                Domain::Scheduling => serde_json::json!({ "scenario": h.scenario, "sampler": h.sampler }),
            },
        };
        let key = serde_json::json!({
            "domain": self.domain,
            "schedules": self.schedule_count(),
            "seeds": self.seeds,
            "train_fraction": self.train_fraction,
            "source": source,
        });
        Ok(fnv_hex(key.to_string().as_bytes()))
    }
}

pub fn framing_name(f: Framing) -> &'static str {
    match f {
        Framing::Pairwise => "pairwise",
        Framing::Pointwise => "pointwise",
        Framing::Standard => "standard",
    }
}
