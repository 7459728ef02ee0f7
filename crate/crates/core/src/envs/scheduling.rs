//! Two-agent, twenty-task scheduling with deadlines, wait constraints,
//! proximity and travel time, demonstrated by heuristic mock experts.
//!
//! An action assigns a free agent to a task now; action id is
//! `agent * task_count + task`. An expert scores every feasible pair with
//! `β₁·H_EDF + β₂·H_distance + H_Index(β₃)` and takes the argmax, ties going
//! to the lowest action id.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DemonstrationSet, DemonstratorId, DomainTag, Observation, Schedule};
use crate::error::{Error, Result};
use crate::rng::{derive, rng};

pub const CONTEXT_DIM: usize = 4;
pub const ACTION_DIM: usize = 6;
/// Mean distance between two uniform points in the unit square.
const MEAN_UNIT_DISTANCE: f64 = 0.521_405;
const MAX_REGENERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub task_count: usize,
    pub agent_count: usize,
    /// Side of the square the tasks live in.
    pub area: f64,
    pub speed: f64,
    pub duration_range: (f64, f64),
    /// Deadlines are drawn uniformly from this range times the nominal horizon.
    pub deadline_factor: (f64, f64),
    pub wait_fraction: f64,
    /// Earliest starts are drawn uniformly from `[0, wait_horizon · horizon]`.
    pub wait_horizon: f64,
    /// A task closer than this to a busy agent's location cannot be assigned.
    pub proximity_radius: f64,
    /// Number of top-priority feasible pairs recorded as taken per decision.
    pub labels_per_step: usize,
    /// Express the deadline and distance heuristics as fractions of the
    /// latest possible deadline and of the area diagonal.
    pub normalize_heuristics: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            task_count: 20,
            agent_count: 2,
            area: 10.0,
            speed: 2.0,
            duration_range: (1.0, 3.0),
            deadline_factor: (1.0, 4.0),
            wait_fraction: 0.25,
            wait_horizon: 0.5,
            proximity_radius: 1.0,
            labels_per_step: 1,
            normalize_heuristics: true,
        }
    }
}

impl ScenarioConfig {
    pub fn action_count(&self) -> usize {
        self.task_count * self.agent_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_count != 20 || self.agent_count != 2 {
            return Err(Error::Config(
                "the scheduling domain has exactly 20 tasks and 2 agents".into(),
            ));
        }
        if !(self.area > 0.0 && self.speed > 0.0) {
            return Err(Error::Config("area and speed must be positive".into()));
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("invalid duration_range".into()));
        }
        let (lo, hi) = self.deadline_factor;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config("invalid deadline_factor".into()));
        }
        if !(0.0..=1.0).contains(&self.wait_fraction) {
            return Err(Error::Config("wait_fraction must lie in [0, 1]".into()));
        }
        if self.labels_per_step == 0 {
            return Err(Error::Config("labels_per_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub location: [f64; 2],
    pub duration: f64,
    pub deadline: f64,
    pub earliest_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    /// Last assigned task location (the destination while busy).
    pub position: [f64; 2],
    pub busy_until: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: u8,
}

impl ExpertProfile {
    pub fn new(beta1: f64, beta2: f64, beta3: u8) -> Result<Self> {
        if beta3 > 1 {
            return Err(Error::InvalidArgument("beta3 is binary".into()));
        }
        Ok(Self { beta1, beta2, beta3 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSampler {
    pub beta1_range: (f64, f64),
    pub beta2_range: (f64, f64),
    pub beta3_probability: f64,
}

impl Default for BetaSampler {
    fn default() -> Self {
        Self {
            beta1_range: (0.0, 2.0),
            beta2_range: (0.0, 2.0),
            beta3_probability: 0.5,
        }
    }
}

impl BetaSampler {
    pub fn sample(&self, r: &mut impl Rng) -> ExpertProfile {
        let uniform = |r: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if hi > lo {
                r.gen_range(lo..hi)
            } else {
                lo
            }
        };
        let beta1 = uniform(r, self.beta1_range);
        let beta2 = uniform(r, self.beta2_range);
        let beta3 = u8::from(r.gen_bool(self.beta3_probability));
        ExpertProfile { beta1, beta2, beta3 }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingScenario {
    pub config: ScenarioConfig,
    pub tasks: Vec<Task>,
    pub agents: Vec<Agent>,
    pub completed: Vec<bool>,
    pub current_time: f64,
    /// Nominal makespan used to scale deadlines and time features.
    pub horizon: f64,
}

/// One executed assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub agent: usize,
    pub task: usize,
    pub time: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub initial: SchedulingScenario,
    pub profile: ExpertProfile,
    pub assignments: Vec<Assignment>,
    pub observations: Vec<Observation>,
}

impl SchedulingScenario {
    pub fn random(config: &ScenarioConfig, r: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let n = config.task_count;
        let area = config.area;
        let durations: Vec<f64> = (0..n)
            .map(|_| r.gen_range(config.duration_range.0..=config.duration_range.1))
            .collect();
        let travel = n as f64 * MEAN_UNIT_DISTANCE * area / config.speed;
        let horizon = (durations.iter().sum::<f64>() + travel) / config.agent_count as f64;
        let waits = (n as f64 * config.wait_fraction).round() as usize;
        let mut waiting: Vec<usize> = (0..n).collect();
        for i in 0..waits {
            let j = r.gen_range(i..n);
            waiting.swap(i, j);
        }
        waiting.truncate(waits);
        let tasks = durations
            .into_iter()
            .enumerate()
            .map(|(j, duration)| {
                let location = [r.gen_range(0.0..area), r.gen_range(0.0..area)];
                let (lo, hi) = config.deadline_factor;
                let deadline = horizon * r.gen_range(lo..=hi);
                let earliest_start = waiting
                    .contains(&j)
                    .then(|| r.gen_range(0.0..=config.wait_horizon * horizon));
                Task {
                    location,
                    duration,
                    deadline,
                    earliest_start,
                }
            })
            .collect();
        let agents = (0..config.agent_count)
            .map(|_| Agent {
                position: [r.gen_range(0.0..area), r.gen_range(0.0..area)],
                busy_until: 0.0,
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tasks,
            agents,
            completed: vec![false; n],
            current_time: 0.0,
            horizon,
        })
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn action_id(&self, agent: usize, task: usize) -> usize {
        agent * self.task_count() + task
    }

    pub fn decode_action(&self, action: usize) -> (usize, usize) {
        (action / self.task_count(), action % self.task_count())
    }

    pub fn remaining(&self) -> usize {
        self.completed.iter().filter(|c| !**c).count()
    }

    pub fn is_free(&self, agent: usize) -> bool {
        self.agents[agent].busy_until <= self.current_time
    }

    pub fn travel_distance(&self, agent: usize, task: usize) -> f64 {
        distance(self.agents[agent].position, self.tasks[task].location)
    }

    /// Earliest finish if `agent` starts toward `task` now.
    pub fn finish_time(&self, agent: usize, task: usize) -> f64 {
        self.current_time
            + self.travel_distance(agent, task) / self.config.speed
            + self.tasks[task].duration
    }

    fn proximity_clear(&self, agent: usize, task: usize) -> bool {
        let loc = self.tasks[task].location;
        self.agents.iter().enumerate().all(|(g, other)| {
            g == agent
                || other.busy_until <= self.current_time
                || distance(other.position, loc) >= self.config.proximity_radius
        })
    }

    /// A pair is schedulable when the agent is free, the task is incomplete,
    /// its wait constraint has elapsed, it can finish by its deadline and
    /// it is not next to a busy agent.
    pub fn is_schedulable(&self, agent: usize, task: usize) -> bool {
        let t = &self.tasks[task];
        agent < self.agents.len()
            && self.is_free(agent)
            && !self.completed[task]
            && t.earliest_start.map_or(true, |es| es <= self.current_time)
            && self.finish_time(agent, task) <= t.deadline
            && self.proximity_clear(agent, task)
    }

    pub fn feasible_actions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for g in 0..self.agents.len() {
            for j in 0..self.task_count() {
                if self.is_schedulable(g, j) {
                    out.push(self.action_id(g, j));
                }
            }
        }
        out
    }

    /// `β₁·H_EDF + β₂·H_distance + H_Index(β₃)` with `H_EDF = −deadline`,
    /// `H_distance = −distance` and `H_Index = β₃·j + (1−β₃)·(−j)`. With
    /// `normalize_heuristics` the first two are divided by the latest
    /// possible deadline and by the area diagonal.
    pub fn expert_priority(&self, agent: usize, task: usize, profile: &ExpertProfile) -> Result<f64> {
        if task >= self.task_count() || !self.is_schedulable(agent, task) {
            return Err(Error::Unschedulable { agent, task });
        }
        let mut edf = -self.tasks[task].deadline;
        let mut near = -self.travel_distance(agent, task);
        if self.config.normalize_heuristics {
            edf /= self.config.deadline_factor.1 * self.horizon;
            near /= self.config.area * std::f64::consts::SQRT_2;
        }
        let j = task as f64;
        let b3 = f64::from(profile.beta3);
        let index = b3 * j + (1.0 - b3) * (-j);
        Ok(profile.beta1 * edf + profile.beta2 * near + index)
    }

    /// Assigns `agent` to `task` at the current time.
    pub fn assign(&mut self, agent: usize, task: usize) -> Result<Assignment> {
        if !self.is_schedulable(agent, task) {
            return Err(Error::Unschedulable { agent, task });
        }
        let finish = self.finish_time(agent, task);
        self.agents[agent].position = self.tasks[task].location;
        self.agents[agent].busy_until = finish;
        self.completed[task] = true;
        Ok(Assignment {
            agent,
            task,
            time: self.current_time,
            finish,
        })
    }

    /// Moves time forward until some pair is feasible. Returns `false` when
    /// tasks remain but no future event can make any of them feasible.
    pub fn advance(&mut self) -> bool {
        loop {
            if self.remaining() == 0 || !self.feasible_actions().is_empty() {
                return true;
            }
            let now = self.current_time;
            let next = self
                .agents
                .iter()
                .map(|a| a.busy_until)
                .chain(
                    self.tasks
                        .iter()
                        .zip(&self.completed)
                        .filter(|(_, &c)| !c)
                        .filter_map(|(t, _)| t.earliest_start),
                )
                .filter(|&t| t > now)
                .fold(f64::INFINITY, f64::min);
            if !next.is_finite() {
                return false;
            }
            self.current_time = next;
        }
    }

    pub fn observation(&self, timestep: u32, taken: Vec<usize>) -> Observation {
        let n = self.task_count();
        let h = self.horizon;
        let t = self.current_time;
        let context = vec![
            t / h,
            f64::from(u8::from(self.is_free(0))),
            f64::from(u8::from(self.is_free(1))),
            self.remaining() as f64 / n as f64,
        ];
        let mut action_features = Vec::with_capacity(self.agents.len() * n);
        let mut available = Vec::new();
        for g in 0..self.agents.len() {
            for j in 0..n {
                let task = &self.tasks[j];
                let feasible = self.is_schedulable(g, j);
                if feasible {
                    available.push(self.action_id(g, j));
                }
                let es = task.earliest_start.unwrap_or(0.0);
                action_features.push(vec![
                    (task.deadline - t) / h,
                    self.travel_distance(g, j) / self.config.area,
                    j as f64,
                    -(j as f64),
                    (t - es) / h,
                    f64::from(u8::from(feasible)),
                ]);
            }
        }
        Observation {
            context,
            action_features,
            taken_actions: taken,
            timestep,
            available: Some(available),
        }
    }

    /// Feasible actions ranked by expert priority, best first; ties keep the
    /// lower action id first.
    pub fn ranked_actions(&self, profile: &ExpertProfile) -> Result<Vec<(usize, f64)>> {
        let mut scored = Vec::new();
        for a in self.feasible_actions() {
            let (g, j) = self.decode_action(a);
            scored.push((a, self.expert_priority(g, j, profile)?));
        }
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        Ok(scored)
    }
}

/// Runs the expert from `scenario` until every task is assigned.
pub fn rollout_expert(scenario: &SchedulingScenario, profile: &ExpertProfile) -> Result<Rollout> {
    let mut state = scenario.clone();
    let mut assignments = Vec::with_capacity(state.task_count());
    let mut observations = Vec::with_capacity(state.task_count());
    let m = state.config.labels_per_step;
    let mut step = 0u32;
    while state.remaining() > 0 {
        if !state.advance() {
            return Err(Error::Deadlock { attempts: 1 });
        }
        let ranked = state.ranked_actions(profile)?;
        let taken: Vec<usize> = ranked.iter().take(m).map(|(a, _)| *a).collect();
        let (g, j) = state.decode_action(ranked[0].0);
        observations.push(state.observation(step, taken));
        assignments.push(state.assign(g, j)?);
        step += 1;
    }
    Ok(Rollout {
        initial: scenario.clone(),
        profile: *profile,
        assignments,
        observations,
    })
}

/// Draws scenarios from `seed` until the expert completes one without
/// deadlock. Returns the rollout and the number of regenerated scenarios.
pub fn demonstrate(config: &ScenarioConfig, profile: &ExpertProfile, seed: u64) -> Result<(Rollout, usize)> {
    for attempt in 0..MAX_REGENERATIONS {
        let mut r = rng(derive(seed, attempt as u64));
        let scenario = SchedulingScenario::random(config, &mut r)?;
        match rollout_expert(&scenario, profile) {
            Ok(ro) => {
                if attempt > 0 {
                    log::debug!("scheduling: {attempt} scenario(s) regenerated after deadlock");
                }
                return Ok((ro, attempt));
            }
            Err(Error::Deadlock { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Deadlock {
        attempts: MAX_REGENERATIONS,
    })
}

#[derive(Debug, Clone)]
pub struct SchedulingData {
    pub set: DemonstrationSet,
    pub profiles: Vec<ExpertProfile>,
    pub rollouts: Vec<Rollout>,
    pub regenerations: usize,
}

pub fn generate_scheduling(
    count: usize,
    sampler: &BetaSampler,
    config: &ScenarioConfig,
    seed: u64,
) -> Result<SchedulingData> {
    if count == 0 {
        return Err(Error::Config("schedule count must be at least 1".into()));
    }
    config.validate()?;
    let mut set = DemonstrationSet::empty(DomainTag::Scheduling, config.action_count(), CONTEXT_DIM, ACTION_DIM);
    let mut profiles = Vec::with_capacity(count);
    let mut rollouts = Vec::with_capacity(count);
    let mut regenerations = 0;
    for i in 0..count {
        let stream = derive(seed, i as u64);
        let profile = sampler.sample(&mut rng(stream));
        let (ro, regen) = demonstrate(config, &profile, derive(stream, 1))?;
        regenerations += regen;
        set.schedules.push(Schedule {
            demonstrator_id: DemonstratorId(i as u32),
            observations: ro.observations.clone(),
        });
        profiles.push(profile);
        rollouts.push(ro);
    }
    if regenerations > 0 {
        log::info!("scheduling: {regenerations} deadlocked scenario(s) regenerated for {count} schedules");
    }
    Ok(SchedulingData {
        set,
        profiles,
        rollouts,
        regenerations,
    })
}

/// Copy of the demonstrations without action features: the context gains
/// one completion flag per task and every action block is empty. Used when
/// action representations have to be learned.
pub fn featureless(data: &SchedulingData) -> DemonstrationSet {
    let mut set = data.set.clone();
    let n = data.rollouts.first().map_or(0, |r| r.initial.task_count());
    set.context_dim += n;
    set.action_dim = 0;
    for (schedule, ro) in set.schedules.iter_mut().zip(&data.rollouts) {
        let mut done = vec![0.0; n];
        for (obs, a) in schedule.observations.iter_mut().zip(&ro.assignments) {
            obs.context.extend_from_slice(&done);
            obs.action_features = vec![Vec::new(); obs.action_features.len()];
            done[a.task] = 1.0;
        }
    }
    set
}
