//! Demonstrations, their on-disk format and schedule-granular splits.
//!
//! File layout (UTF-8, one JSON value per line):
//!
//! ```text
//! apprentice-dataset v1
//! {"domain":"lowdim","action_count":2,"context_dim":2,"action_dim":2,"schedules":[[0,3],[1,7]]}
//! {"schedule_id":0,"demonstrator_id":3,"timestep":0,"context":[..],"action_features":[[..],..],"taken_actions":[1],"available":null}
//! ...
//! ```
//!
//! The second line lists `[schedule_id, demonstrator_id]` in schedule order so
//! that empty sets and schedule ordering survive a round trip. Floats are
//! written in shortest round-trip decimal form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "apprentice-dataset v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemonstratorId(pub u32);

impl fmt::Display for DemonstratorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Lowdim,
    Scheduling,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Features shared by all actions.
    pub context: Vec<f64>,
    /// One feature vector per action id.
    pub action_features: Vec<Vec<f64>>,
    pub taken_actions: Vec<usize>,
    pub timestep: u32,
    /// Legal actions at this step; `None` means every action is legal.
    pub available: Option<Vec<usize>>,
}

impl Observation {
    pub fn action_count(&self) -> usize {
        self.action_features.len()
    }

    pub fn available_actions(&self) -> Vec<usize> {
        match &self.available {
            Some(a) => a.clone(),
            None => (0..self.action_count()).collect(),
        }
    }

    pub fn is_available(&self, action: usize) -> bool {
        match &self.available {
            Some(a) => a.contains(&action),
            None => action < self.action_count(),
        }
    }

    /// The taken action of a single-label observation.
    pub fn single_action(&self) -> Result<usize> {
        match self.taken_actions.as_slice() {
            [a] => Ok(*a),
            other => Err(Error::InvalidArgument(format!(
                "expected one taken action, found {}",
                other.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub demonstrator_id: DemonstratorId,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub schedules: Vec<Schedule>,
    pub action_count: usize,
    pub context_dim: usize,
    pub action_dim: usize,
    pub domain: DomainTag,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    domain: DomainTag,
    action_count: usize,
    context_dim: usize,
    action_dim: usize,
    schedules: Vec<(usize, DemonstratorId)>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    schedule_id: usize,
    demonstrator_id: DemonstratorId,
    timestep: u32,
    context: Vec<f64>,
    action_features: Vec<Vec<f64>>,
    taken_actions: Vec<usize>,
    available: Option<Vec<usize>>,
}

impl DemonstrationSet {
    pub fn empty(domain: DomainTag, action_count: usize, context_dim: usize, action_dim: usize) -> Self {
        Self {
            schedules: Vec::new(),
            action_count,
            context_dim,
            action_dim,
            domain,
        }
    }

    pub fn observation_count(&self) -> usize {
        self.schedules.iter().map(|s| s.observations.len()).sum()
    }

    pub fn demonstrators(&self) -> Vec<DemonstratorId> {
        let set: BTreeSet<_> = self.schedules.iter().map(|s| s.demonstrator_id).collect();
        set.into_iter().collect()
    }

    pub fn schedules_of(&self, id: DemonstratorId) -> impl Iterator<Item = &Schedule> {
        self.schedules.iter().filter(move |s| s.demonstrator_id == id)
    }

    /// Checks the structural invariants of every observation.
    pub fn validate(&self) -> Result<()> {
        if self.action_count == 0 {
            return Err(Error::NoActions);
        }
        for (si, s) in self.schedules.iter().enumerate() {
            if self.domain == DomainTag::Lowdim && s.observations.len() != 20 {
                return Err(Error::InvalidArgument(format!(
                    "schedule {si}: low-dimensional schedules hold 20 observations, found {}",
                    s.observations.len()
                )));
            }
            let mut last: Option<u32> = None;
            for o in &s.observations {
                check_observation(self, o).map_err(|m| {
                    Error::InvalidArgument(format!("schedule {si}, timestep {}: {m}", o.timestep))
                })?;
                if last.is_some_and(|t| o.timestep <= t) {
                    return Err(Error::InvalidArgument(format!(
                        "schedule {si}: timesteps not strictly increasing"
                    )));
                }
                last = Some(o.timestep);
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        let meta = Meta {
            domain: self.domain,
            action_count: self.action_count,
            context_dim: self.context_dim,
            action_dim: self.action_dim,
            schedules: self
                .schedules
                .iter()
                .enumerate()
                .map(|(i, s)| (i, s.demonstrator_id))
                .collect(),
        };
        serde_json::to_writer(&mut *w, &meta)?;
        writeln!(w)?;
        for (i, s) in self.schedules.iter().enumerate() {
            for o in &s.observations {
                let rec = Record {
                    schedule_id: i,
                    demonstrator_id: s.demonstrator_id,
                    timestep: o.timestep,
                    context: o.context.clone(),
                    action_features: o.action_features.clone(),
                    taken_actions: o.taken_actions.clone(),
                    available: o.available.clone(),
                };
                serde_json::to_writer(&mut *w, &rec)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        Self::read_from(reader, &path.display().to_string())
    }

    pub fn read_from(reader: impl BufRead, source: &str) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Format {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| fail(1, "missing header".into()))??;
        if header.trim_end() != HEADER {
            return Err(Error::SchemaVersion(header));
        }
        let meta_line = lines
            .next()
            .ok_or_else(|| fail(2, "missing metadata record".into()))??;
        let meta: Meta =
            serde_json::from_str(&meta_line).map_err(|e| fail(2, e.to_string()))?;
        if meta.action_count == 0 {
            return Err(Error::NoActions);
        }
        let mut index = BTreeMap::new();
        let mut schedules = Vec::with_capacity(meta.schedules.len());
        for (pos, (id, demo)) in meta.schedules.iter().enumerate() {
            if index.insert(*id, pos).is_some() {
                return Err(fail(2, format!("duplicate schedule id {id}")));
            }
            schedules.push(Schedule {
                demonstrator_id: *demo,
                observations: Vec::new(),
            });
        }
        let mut set = Self {
            schedules,
            action_count: meta.action_count,
            context_dim: meta.context_dim,
            action_dim: meta.action_dim,
            domain: meta.domain,
        };
        for (n, line) in lines.enumerate() {
            let lineno = n + 3;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| fail(lineno, e.to_string()))?;
            let pos = *index
                .get(&rec.schedule_id)
                .ok_or_else(|| fail(lineno, format!("unknown schedule id {}", rec.schedule_id)))?;
            if set.schedules[pos].demonstrator_id != rec.demonstrator_id {
                return Err(fail(lineno, "demonstrator id disagrees with metadata".into()));
            }
            let obs = Observation {
                context: rec.context,
                action_features: rec.action_features,
                taken_actions: rec.taken_actions,
                timestep: rec.timestep,
                available: rec.available,
            };
            check_observation(&set, &obs).map_err(|m| fail(lineno, m))?;
            set.schedules[pos].observations.push(obs);
        }
        Ok(set)
    }

    /// Splits by whole schedules: `round(n · train_fraction)` schedules go to
    /// the training side after a seeded shuffle; original order is kept
    /// within each side.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let n = self.schedules.len();
        if n < 2 {
            return Err(Error::InvalidArgument("split needs at least two schedules".into()));
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train_fraction must lie in (0, 1)".into()));
        }
        let n_train = (n as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::InvalidArgument(format!(
                "train_fraction {train_fraction} leaves one side of a {n}-schedule split empty"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut is_train = vec![false; n];
        for &i in &order[..n_train] {
            is_train[i] = true;
        }
        let pick = |want: bool| Self {
            schedules: self
                .schedules
                .iter()
                .zip(&is_train)
                .filter(|(_, &t)| t == want)
                .map(|(s, _)| s.clone())
                .collect(),
            ..Self::empty(self.domain, self.action_count, self.context_dim, self.action_dim)
        };
        Ok((pick(true), pick(false)))
    }
}

fn check_observation(set: &DemonstrationSet, o: &Observation) -> std::result::Result<(), String> {
    if o.context.len() != set.context_dim {
        return Err(format!(
            "context has {} features, expected {}",
            o.context.len(),
            set.context_dim
        ));
    }
    if o.action_features.len() != set.action_count {
        return Err(format!(
            "{} action feature vectors, expected {}",
            o.action_features.len(),
            set.action_count
        ));
    }
    if let Some(bad) = o.action_features.iter().find(|f| f.len() != set.action_dim) {
        return Err(format!(
            "action feature vector of length {}, expected {}",
            bad.len(),
            set.action_dim
        ));
    }
    if let Some(a) = o.taken_actions.iter().find(|&&a| a >= set.action_count) {
        return Err(format!("taken action {a} out of range"));
    }
    if let Some(av) = &o.available {
        if let Some(a) = av.iter().find(|&&a| a >= set.action_count) {
            return Err(format!("available action {a} out of range"));
        }
    }
    Ok(())
}
