//! Two-mode synthetic environment.
//!
//! Each observation carries a binary `x` and a standard-normal `z`; the label
//! is `y = x · 1[(z ≥ 0 ∧ λ = 1) ∨ (z < 0 ∧ λ = 2)]` where the mode `λ` is
//! fixed per demonstrator and never observed. Labels are exposed as two
//! actions with one-hot action features.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemonstrationSet, DemonstratorId, DomainTag, Observation, Schedule};
use crate::error::{Error, Result};
use crate::rng::{derive, rng};

pub const OBSERVATIONS_PER_SCHEDULE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowDimConfig {
    pub schedule_count: usize,
    pub observations_per_schedule: usize,
    /// Probability that a demonstrator has mode `λ = 1`.
    pub lambda_distribution: f64,
    /// Probability that `x = 1`.
    pub x_one_probability: f64,
    pub seed: u64,
}

impl Default for LowDimConfig {
    fn default() -> Self {
        Self {
            schedule_count: 50,
            observations_per_schedule: OBSERVATIONS_PER_SCHEDULE,
            lambda_distribution: 0.5,
            x_one_probability: 0.95,
            seed: 1,
        }
    }
}

/// Hidden demonstrator mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
}

pub fn lowdim_label(x: bool, z: f64, mode: Mode) -> usize {
    let gate = (z >= 0.0 && mode == Mode::One) || (z < 0.0 && mode == Mode::Two);
    usize::from(x && gate)
}

pub fn lowdim_observation(x: bool, z: f64, mode: Mode, timestep: u32) -> Observation {
    Observation {
        context: vec![if x { 1.0 } else { 0.0 }, z],
        action_features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        taken_actions: vec![lowdim_label(x, z, mode)],
        timestep,
        available: None,
    }
}

/// Generated set plus the hidden mode of every demonstrator (indexed by id).
#[derive(Debug, Clone)]
pub struct LowDimData {
    pub set: DemonstrationSet,
    pub modes: Vec<Mode>,
}

pub fn generate_lowdim(config: &LowDimConfig) -> Result<LowDimData> {
    if config.schedule_count == 0 {
        return Err(Error::Config("schedule_count must be positive".into()));
    }
    if config.observations_per_schedule != OBSERVATIONS_PER_SCHEDULE {
        return Err(Error::Config(format!(
            "low-dimensional schedules hold {OBSERVATIONS_PER_SCHEDULE} observations"
        )));
    }
    for (name, p) in [
        ("lambda_distribution", config.lambda_distribution),
        ("x_one_probability", config.x_one_probability),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0, 1]")));
        }
    }
    let mut set = DemonstrationSet::empty(DomainTag::Lowdim, 2, 2, 2);
    let mut modes = Vec::with_capacity(config.schedule_count);
    for i in 0..config.schedule_count {
        let mut r = rng(derive(config.seed, i as u64));
        let mode = if r.gen_bool(config.lambda_distribution) {
            Mode::One
        } else {
            Mode::Two
        };
        let observations = (0..config.observations_per_schedule)
            .map(|t| {
                let x = r.gen_bool(config.x_one_probability);
                let z: f64 = r.sample(StandardNormal);
                lowdim_observation(x, z, mode, t as u32)
            })
            .collect();
        set.schedules.push(Schedule {
            demonstrator_id: DemonstratorId(i as u32),
            observations,
        });
        modes.push(mode);
    }
    Ok(LowDimData { set, modes })
}
