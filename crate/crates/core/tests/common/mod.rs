//! Property checks shared by the proptest suite and the acceptance runner.
//! Each check draws its instance from `seed` and reports the first
//! violation as an error message.

#![allow(dead_code)]

use apprentice::actionrep::{transitions, TransitionConfig, TransitionModel};
use apprentice::dataset::{DemonstrationSet, DemonstratorId, Observation};
use apprentice::diffcore::{ParamGroup, ParamId, ParamStore, Tape, Var};
use apprentice::envs::{
    generate_lowdim, generate_scheduling, rollout_expert, BetaSampler, ExpertProfile, LowDimConfig, ScenarioConfig,
    SchedulingScenario,
};
use apprentice::pairwise::{build_pairwise, predict_action, PairOptions};
use apprentice::pddt::{crispify, saturation_agreement, PddtModel, SoftTree, TreeConfig};
use apprentice::pnn::{AdaptConfig, AdaptMode, FeatureDims, LearnerOptions, MlpConfig, PnnModel};
use apprentice::rng::{derive, rng};
use apprentice::diffcore::SgdConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Check = Result<(), String>;

const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
const GRAD_FLOOR: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Central-difference check of `grads` against `f`, perturbing each
/// coordinate read by `get` and written by `set`.
fn finite_difference(
    n: usize,
    grads: &[f64],
    mut get: impl FnMut(usize) -> f64,
    mut set: impl FnMut(usize, f64),
    mut f: impl FnMut() -> f64,
    h: f64,
) -> Check {
    for i in 0..n {
        let v = get(i);
        set(i, v + h);
        let up = f();
        set(i, v - h);
        let down = f();
        set(i, v);
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(grads[i], numeric);
        if !(err < GRAD_TOLERANCE) {
            return Err(format!(
                "coordinate {i}: analytic {} vs numeric {numeric} (relative error {err:e})",
                grads[i]
            ));
        }
    }
    Ok(())
}

/// Random expression over every tape operation. Operands of kinks are
/// returned so instances sitting on one can be redrawn.
struct RandomTape {
    tape: Tape,
    inputs: Vec<f64>,
    input_vars: Vec<Var>,
    params: ParamStore,
    kinks: Vec<(Var, Var)>,
}

fn random_tape(r: &mut ChaCha8Rng) -> RandomTape {
    let mut tape = Tape::new();
    let mut params = ParamStore::new();
    let n_inputs = r.gen_range(1..4);
    let inputs: Vec<f64> = (0..n_inputs).map(|_| normal(r)).collect();
    let input_vars: Vec<Var> = (0..n_inputs).map(|i| tape.input(i)).collect();
    let mut pool = input_vars.clone();
    for _ in 0..r.gen_range(1..6) {
        let id = params.push(normal(r), ParamGroup::Model);
        pool.push(tape.param(id));
    }
    let mut kinks = Vec::new();
    let zero = tape.constant(0.0);
    for _ in 0..r.gen_range(3..16) {
        let a = *pool.choose(r).unwrap();
        let b = *pool.choose(r).unwrap();
        let v = match r.gen_range(0..15) {
            0 => tape.add(a, b),
            1 => tape.sub(a, b),
            2 => tape.mul(a, b),
            3 => {
                let t = tape.tanh(b);
                let c = tape.constant(1.5);
                let den = tape.add(c, t);
                tape.div(a, den)
            }
            4 => tape.neg(a),
            5 => {
                let t = tape.tanh(a);
                tape.exp(t)
            }
            6 => {
                let t = tape.tanh(a);
                let c = tape.constant(1.1);
                let pos = tape.add(c, t);
                tape.log(pos)
            }
            7 => {
                kinks.push((a, b));
                tape.max(a, b)
            }
            8 => {
                kinks.push((a, b));
                tape.min(a, b)
            }
            9 => tape.sigmoid(a),
            10 => tape.tanh(a),
            11 => {
                kinks.push((a, zero));
                tape.relu(a)
            }
            12 => {
                let k = r.gen_range(1..4);
                let xs: Vec<Var> = (0..k).map(|_| *pool.choose(r).unwrap()).collect();
                let ys: Vec<Var> = (0..k).map(|_| *pool.choose(r).unwrap()).collect();
                if r.gen_bool(0.5) {
                    tape.sum(&xs)
                } else {
                    tape.dot(&xs, &ys)
                }
            }
            13 => {
                let k = r.gen_range(2..5);
                let xs: Vec<Var> = (0..k).map(|_| *pool.choose(r).unwrap()).collect();
                let s = tape.softmax(&xs);
                s[r.gen_range(0..k)]
            }
            _ => {
                let k = r.gen_range(1..4);
                let pick = |r: &mut ChaCha8Rng| -> Vec<Var> { (0..k).map(|_| *pool.choose(r).unwrap()).collect() };
                let (w, c, x, s) = (pick(r), pick(r), pick(r), pick(r));
                for i in 0..k {
                    for j in 0..i {
                        kinks.push((s[i], s[j]));
                    }
                }
                tape.select(&w, &c, &x, &s, false)
            }
        };
        pool.push(v);
    }
    let last = *pool.last().unwrap();
    let other = *pool.choose(r).unwrap();
    let out = tape.add(last, other);
    tape.output(out);
    RandomTape {
        tape,
        inputs,
        input_vars,
        params,
        kinks,
    }
}

/// Reverse-mode gradients of a random tape, with respect to parameters and
/// inputs, match central differences.
pub fn tape_gradient(seed: u64) -> Check {
    let mut r = rng(derive(seed, 0x7a9e));
    let mut t = loop {
        let mut t = random_tape(&mut r);
        let out = t.tape.forward(&t.inputs, &t.params).map_err(|e| e.to_string())?;
        let clear = t
            .kinks
            .iter()
            .all(|&(a, b)| (t.tape.value(a) - t.tape.value(b)).abs() > 1e-3);
        if clear && out[0].is_finite() && out[0].abs() < 1e6 {
            break t;
        }
    };
    t.tape.backward(&[1.0], &mut t.params).map_err(|e| e.to_string())?;
    let param_grads: Vec<f64> = t.params.iter().map(|(_, p)| p.grad).collect();
    let input_grads: Vec<f64> = t.input_vars.iter().map(|&v| t.tape.grad(v)).collect();
    let RandomTape {
        mut tape,
        mut inputs,
        mut params,
        ..
    } = t;
    let n = params.len();
    {
        let store = std::cell::RefCell::new(&mut params);
        let tape = std::cell::RefCell::new(&mut tape);
        finite_difference(
            n,
            &param_grads,
            |i| store.borrow().value(ParamId(i as u32)),
            |i, v| store.borrow_mut().set_value(ParamId(i as u32), v),
            || tape.borrow_mut().forward(&inputs, &store.borrow()).unwrap()[0],
            FD_STEP,
        )
        .map_err(|e| format!("parameter {e}"))?;
    }
    let m = inputs.len();
    let cell = std::cell::RefCell::new(&mut inputs);
    finite_difference(
        m,
        &input_grads,
        |i| cell.borrow()[i],
        |i, v| cell.borrow_mut()[i] = v,
        || tape.forward(&cell.borrow(), &params).unwrap()[0],
        FD_STEP,
    )
    .map_err(|e| format!("input {e}"))
}

/// Pairwise marginalization sums to one over the candidates and its argmax
/// survives a positive rescaling of every pair score. Also compared with a
/// direct evaluation of the formula.
pub fn marginalization(seed: u64) -> Check {
    let mut r = rng(derive(seed, 0x3a2));
    let n = r.gen_range(2..12);
    let mut candidates: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.7)).collect();
    if candidates.len() < 2 {
        candidates = vec![0, n - 1];
    }
    let f: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.gen_range(0.01..1.0)).collect()).collect();
    let scale = r.gen_range(0.01..100.0);
    let include_self = r.gen_bool(0.3);
    let d = predict_action(n, &candidates, include_self, |a, b| f[a][b]);
    let scaled = predict_action(n, &candidates, include_self, |a, b| scale * f[a][b]);
    let total: f64 = d.probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("probabilities sum to {total}"));
    }
    if d.argmax() != scaled.argmax() {
        return Err(format!("argmax {} became {} after scaling by {scale}", d.argmax(), scaled.argmax()));
    }
    let row = |a: usize| -> f64 {
        candidates
            .iter()
            .filter(|&&b| include_self || b != a)
            .map(|&b| f[a][b])
            .sum()
    };
    let z: f64 = candidates.iter().map(|&a| row(a)).sum();
    for a in 0..n {
        let expected = if candidates.contains(&a) { row(a) / z } else { 0.0 };
        if (d.probs[a] - expected).abs() > 1e-12 {
            return Err(format!("P({a}) = {} but the formula gives {expected}", d.probs[a]));
        }
    }
    Ok(())
}

fn random_observation(r: &mut ChaCha8Rng, labels: usize) -> Observation {
    let n = r.gen_range(labels + 1..13);
    let context_dim = r.gen_range(0..4);
    let action_dim = r.gen_range(1..4);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(r);
    Observation {
        context: (0..context_dim).map(|_| normal(r)).collect(),
        action_features: (0..n).map(|_| (0..action_dim).map(|_| normal(r)).collect()).collect(),
        taken_actions: ids[..labels].to_vec(),
        timestep: r.gen_range(0..100),
        available: None,
    }
}

/// Pairwise construction on a random observation with `labels` taken
/// actions; see [`pairwise_examples`].
pub fn pairwise_construction(seed: u64, labels: usize) -> Check {
    let mut r = rng(derive(seed, 0x9a1));
    let obs = random_observation(&mut r, labels);
    let emb: Vec<f64> = (0..r.gen_range(0..3)).map(|_| normal(&mut r)).collect();
    pairwise_examples(&obs, &emb, false)
}

/// Pairwise construction: `2(|A| − 1)` examples for one taken action
/// (`2·m·(|C| − m)` for `m` taken among `|C|` compared actions), every
/// example paired with its swap, whose label is flipped and whose
/// difference block is negated.
pub fn pairwise_examples(obs: &Observation, emb: &[f64], available_only: bool) -> Check {
    let labels = obs.taken_actions.len();
    let compared = if available_only {
        obs.available_actions().len()
    } else {
        obs.action_count()
    };
    let opts = PairOptions {
        multi_label: labels > 1,
        available_only,
    };
    let ex = build_pairwise(obs, emb, DemonstratorId(3), opts).map_err(|e| e.to_string())?;
    let expected = 2 * labels * (compared - labels);
    if ex.len() != expected {
        return Err(format!(
            "{} examples for {compared} compared actions, {labels} taken; expected {expected}",
            ex.len()
        ));
    }
    let head = emb.len() + obs.context.len();
    for e in &ex {
        let (a, b) = (e.meta.first, e.meta.second);
        let twin = ex
            .iter()
            .find(|o| o.meta.first == b && o.meta.second == a)
            .ok_or_else(|| format!("pair ({a}, {b}) has no swap"))?;
        if twin.label != 1 - e.label {
            return Err(format!("pair ({a}, {b}) and its swap share label {}", e.label));
        }
        if e.label != u8::from(obs.taken_actions.contains(&a)) {
            return Err(format!("pair ({a}, {b}) labelled {}", e.label));
        }
        if e.features[..head] != twin.features[..head] {
            return Err(format!("pair ({a}, {b}) and its swap differ outside the difference block"));
        }
        for (x, y) in e.features[head..].iter().zip(&twin.features[head..]) {
            if *x != -*y {
                return Err(format!("pair ({a}, {b}): difference {x} is not the negation of {y}"));
            }
        }
        let diff: Vec<f64> = obs.action_features[a]
            .iter()
            .zip(&obs.action_features[b])
            .map(|(p, q)| p - q)
            .collect();
        if e.features[head..] != diff[..] {
            return Err(format!("pair ({a}, {b}) does not carry x_a − x_b"));
        }
    }
    Ok(())
}

fn random_tree(r: &mut ChaCha8Rng, depth: usize, straight_through: bool) -> (SoftTree, ParamStore) {
    let mut params = ParamStore::new();
    let config = TreeConfig {
        depth,
        straight_through,
        initial_alpha: r.gen_range(-3.0..3.0),
        leaf_init_std: 1.0,
    };
    let inputs = r.gen_range(1..6);
    let outputs = r.gen_range(2..4);
    let tree = SoftTree::new(inputs, outputs, &config, &mut params, r);
    for n in &tree.nodes {
        params.set_value(n.alpha, r.gen_range(-3.0..3.0));
    }
    (tree, params)
}

/// Leaf path probabilities of a soft tree are non-negative and sum to one.
pub fn path_probabilities(seed: u64) -> Check {
    let mut r = rng(derive(seed, 0x9a7));
    let depth = r.gen_range(1..6);
    let (tree, params) = random_tree(&mut r, depth, true);
    let x: Vec<f64> = (0..tree.inputs).map(|_| 3.0 * normal(&mut r)).collect();
    let p = tree.path_probabilities(&params, &x);
    if p.len() != 1 << depth {
        return Err(format!("{} leaves at depth {depth}", p.len()));
    }
    if p.iter().any(|v| *v < 0.0) {
        return Err("negative path probability".into());
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("path probabilities sum to {total}"));
    }
    Ok(())
}

/// Fraction of `inputs` random inputs on which the crisp tree agrees with the
/// soft tree at `|α| = 10⁶`.
pub fn crisp_agreement(seed: u64, inputs: usize) -> f64 {
    let mut r = rng(derive(seed, 0xc1));
    let depth = r.gen_range(2..5);
    let (tree, params) = random_tree(&mut r, depth, true);
    let crisp = crispify(&tree, &params, 0);
    let xs: Vec<Vec<f64>> = (0..inputs)
        .map(|_| (0..tree.inputs).map(|_| normal(&mut r)).collect())
        .collect();
    saturation_agreement(&tree, &params, &crisp, 1e6, &xs)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Feasibility written out from the constraint definitions.
fn oracle_feasible(s: &SchedulingScenario, agent: usize, task: usize) -> bool {
    let now = s.current_time;
    let t = &s.tasks[task];
    let a = &s.agents[agent];
    let finish = now + distance(a.position, t.location) / s.config.speed + t.duration;
    a.busy_until <= now
        && !s.completed[task]
        && t.earliest_start.map_or(true, |es| es <= now)
        && finish <= t.deadline
        && s.agents.iter().enumerate().all(|(g, other)| {
            g == agent || other.busy_until <= now || distance(other.position, t.location) >= s.config.proximity_radius
        })
}

fn oracle_priority(s: &SchedulingScenario, agent: usize, task: usize, p: &ExpertProfile) -> f64 {
    let mut edf = -s.tasks[task].deadline;
    let mut near = -distance(s.agents[agent].position, s.tasks[task].location);
    if s.config.normalize_heuristics {
        edf /= s.config.deadline_factor.1 * s.horizon;
        near /= s.config.area * 2f64.sqrt();
    }
    let j = task as f64;
    let index = if p.beta3 == 1 { j } else { -j };
    p.beta1 * edf + p.beta2 * near + index
}

/// Exhaustive argmax over every (agent, task) pair; lowest action id on ties.
fn oracle_choice(s: &SchedulingScenario, p: &ExpertProfile) -> Option<usize> {
    let n = s.tasks.len();
    let mut best: Option<(usize, f64)> = None;
    for g in 0..s.agents.len() {
        for j in 0..n {
            if !oracle_feasible(s, g, j) {
                continue;
            }
            let v = oracle_priority(s, g, j, p);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g * n + j, v));
            }
        }
    }
    best.map(|(a, _)| a)
}

/// Replays a mock-expert rollout: every decision equals the exhaustive
/// argmax of the priority over feasible pairs, and no executed assignment
/// breaks a constraint. Returns the number of decisions checked.
pub fn expert_matches_oracle(seed: u64) -> Result<usize, String> {
    let mut r = rng(derive(seed, 0xe4));
    let config = ScenarioConfig {
        normalize_heuristics: r.gen_bool(0.8),
        ..Default::default()
    };
    let profile = BetaSampler::default().sample(&mut r);
    let rollout = loop {
        let scenario = SchedulingScenario::random(&config, &mut r).map_err(|e| e.to_string())?;
        if let Ok(ro) = rollout_expert(&scenario, &profile) {
            break ro;
        }
    };
    let mut state = rollout.initial.clone();
    let mut seen = vec![false; state.tasks.len()];
    for (step, (obs, done)) in rollout.observations.iter().zip(&rollout.assignments).enumerate() {
        state.advance();
        if (state.current_time - done.time).abs() > 1e-12 {
            return Err(format!("step {step}: state time {} but decision at {}", state.current_time, done.time));
        }
        let want = oracle_choice(&state, &profile).ok_or_else(|| format!("step {step}: no feasible pair"))?;
        let got = state.action_id(done.agent, done.task);
        if got != want || obs.taken_actions[0] != want {
            return Err(format!("step {step}: expert chose {got}, oracle {want}"));
        }
        if !oracle_feasible(&state, done.agent, done.task) || seen[done.task] {
            return Err(format!("step {step}: assignment breaks a constraint"));
        }
        seen[done.task] = true;
        state.assign(done.agent, done.task).map_err(|e| e.to_string())?;
    }
    if seen.iter().any(|d| !d) {
        return Err("rollout left tasks unassigned".into());
    }
    Ok(rollout.assignments.len())
}

pub fn small_lowdim(seed: u64, schedules: usize) -> DemonstrationSet {
    generate_lowdim(&LowDimConfig {
        schedule_count: schedules,
        seed,
        ..Default::default()
    })
    .unwrap()
    .set
}

/// A few decisions of a few scheduling demonstrations; `labels` taken
/// actions per decision.
pub fn small_scheduling(seed: u64, schedules: usize, steps: usize, labels: usize) -> DemonstrationSet {
    let config = ScenarioConfig {
        labels_per_step: labels,
        ..Default::default()
    };
    let mut set = generate_scheduling(schedules, &BetaSampler::default(), &config, seed)
        .unwrap()
        .set;
    for s in &mut set.schedules {
        s.observations.truncate(steps);
    }
    set
}

fn options(multi_label: bool) -> LearnerOptions {
    let mut o = LearnerOptions::default();
    o.pair.multi_label = multi_label;
    o
}

/// Gradient of a personalized network's training objective, embeddings
/// included, against central differences.
pub fn pnn_gradient(data: &DemonstrationSet, seed: u64) -> Check {
    let multi = data.schedules.iter().flat_map(|s| &s.observations).any(|o| o.taken_actions.len() > 1);
    let config = MlpConfig {
        hidden: vec![5],
        ..Default::default()
    };
    let mut m = PnnModel::mlp(FeatureDims::of(data), options(multi), &config, seed);
    let (_, grads) = m.objective(data).map_err(|e| e.to_string())?;
    let n = m.params.len();
    let m = std::cell::RefCell::new(m);
    finite_difference(
        n,
        &grads,
        |i| m.borrow().params.value(ParamId(i as u32)),
        |i, v| m.borrow_mut().params.set_value(ParamId(i as u32), v),
        || m.borrow_mut().objective(data).unwrap().0,
        FD_STEP,
    )
}

/// Same for the differentiable tree with the feature selection frozen
/// (exact one-hot partials).
pub fn pddt_gradient(data: &DemonstrationSet, seed: u64) -> Check {
    let multi = data.schedules.iter().flat_map(|s| &s.observations).any(|o| o.taken_actions.len() > 1);
    let config = TreeConfig {
        depth: 2,
        straight_through: false,
        ..Default::default()
    };
    let mut m = PddtModel::tree(FeatureDims::of(data), options(multi), &config, seed);
    let (_, grads) = m.objective(data).map_err(|e| e.to_string())?;
    let n = m.params.len();
    let m = std::cell::RefCell::new(m);
    finite_difference(
        n,
        &grads,
        |i| m.borrow().params.value(ParamId(i as u32)),
        |i, v| m.borrow_mut().params.set_value(ParamId(i as u32), v),
        || m.borrow_mut().objective(data).unwrap().0,
        FD_STEP,
    )
}

/// Same for the transition model, action embeddings included.
pub fn transition_gradient(data: &DemonstrationSet, seed: u64) -> Check {
    let (ts, _) = transitions(data);
    let config = TransitionConfig {
        hidden: 4,
        embedding_dim: 3,
        seed,
        ..Default::default()
    };
    let m = TransitionModel::new(data.context_dim, data.action_count, &config);
    let mut m = m;
    let (_, grads) = m.objective(&ts).map_err(|e| e.to_string())?;
    let n = m.params.len();
    let m = std::cell::RefCell::new(m);
    finite_difference(
        n,
        &grads,
        |i| m.borrow().params.value(ParamId(i as u32)),
        |i, v| m.borrow_mut().params.set_value(ParamId(i as u32), v),
        || m.borrow_mut().objective(&ts).unwrap().0,
        FD_STEP,
    )
}

/// Adapting embeddings of new demonstrators, online and in batch, leaves
/// the model parameters bit-identical.
pub fn frozen_theta(seed: u64) -> Check {
    let data = small_lowdim(seed, 6);
    let (train, test) = data.split(0.5, seed).map_err(|e| e.to_string())?;
    let sgd = SgdConfig {
        epochs: 2,
        seed,
        ..Default::default()
    };
    let mlp = MlpConfig {
        hidden: vec![8],
        ..Default::default()
    };
    let mut pnn = PnnModel::mlp(FeatureDims::of(&train), LearnerOptions::default(), &mlp, seed);
    pnn.train(&train, &sgd).map_err(|e| e.to_string())?;
    let tree = TreeConfig {
        depth: 2,
        ..Default::default()
    };
    let mut pddt = PddtModel::tree(FeatureDims::of(&train), LearnerOptions::default(), &tree, seed);
    pddt.train(&train, &sgd).map_err(|e| e.to_string())?;
    let (p0, t0) = (pnn.theta_checksum(), pddt.theta_checksum());
    for mode in [AdaptMode::Online, AdaptMode::Batch] {
        let adapt = AdaptConfig {
            mode,
            ..Default::default()
        };
        for s in &test.schedules {
            pnn.evaluate_schedule(s, &adapt).map_err(|e| e.to_string())?;
            pddt.evaluate_schedule(s, &adapt).map_err(|e| e.to_string())?;
            pnn.adapt_embedding(s.demonstrator_id, &s.observations, &adapt)
                .map_err(|e| e.to_string())?;
        }
        if pnn.theta_checksum() != p0 || pddt.theta_checksum() != t0 {
            return Err(format!("model parameters changed during {mode:?} adaptation"));
        }
    }
    Ok(())
}

/// Writing and reading a demonstration set returns an identical set.
pub fn dataset_round_trip(set: &DemonstrationSet) -> Check {
    let mut buf = Vec::new();
    set.write_to(&mut buf).map_err(|e| e.to_string())?;
    let back = DemonstrationSet::read_from(&buf[..], "memory").map_err(|e| e.to_string())?;
    if &back != set {
        return Err("read-back set differs".into());
    }
    Ok(())
}

/// A random set with awkward floats, optional availability lists and
/// several taken actions.
pub fn random_set(seed: u64) -> DemonstrationSet {
    use apprentice::dataset::{DomainTag, Schedule};
    let mut r = rng(derive(seed, 0xd5));
    let actions = r.gen_range(2..6);
    let context_dim = r.gen_range(0..3);
    let action_dim = r.gen_range(0..3);
    let awkward = |r: &mut ChaCha8Rng| -> f64 {
        match r.gen_range(0..5) {
            0 => f64::MIN_POSITIVE,
            1 => -0.0,
            2 => 1e300 * normal(r),
            3 => 0.1 + 0.2,
            _ => normal(r),
        }
    };
    let schedules = (0..r.gen_range(0..4))
        .map(|i| Schedule {
            demonstrator_id: DemonstratorId(r.gen_range(0..3)),
            observations: (0..r.gen_range(0..4))
                .map(|t| {
                    let mut taken: Vec<usize> = (0..actions).filter(|_| r.gen_bool(0.4)).collect();
                    if taken.is_empty() {
                        taken.push(i % actions);
                    }
                    Observation {
                        context: (0..context_dim).map(|_| awkward(&mut r)).collect(),
                        action_features: (0..actions)
                            .map(|_| (0..action_dim).map(|_| awkward(&mut r)).collect())
                            .collect(),
                        available: r.gen_bool(0.5).then(|| (0..actions).collect()),
                        taken_actions: taken,
                        timestep: t,
                    }
                })
                .collect(),
        })
        .collect();
    DemonstrationSet {
        schedules,
        action_count: actions,
        context_dim,
        action_dim,
        domain: DomainTag::Generic,
    }
}
