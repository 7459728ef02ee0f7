//! Synthetic demonstration generators.

pub mod lowdim;
pub mod scheduling;

pub use lowdim::{generate_lowdim, lowdim_label, LowDimConfig, LowDimData, Mode};
pub use scheduling::{
    demonstrate, featureless, generate_scheduling, rollout_expert, Assignment, BetaSampler, ExpertProfile, Rollout,
    ScenarioConfig, SchedulingData, SchedulingScenario,
};
