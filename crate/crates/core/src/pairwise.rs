//! Counterfactual pairwise examples, their marginalization back into an
//! action distribution, and the pointwise / standard framings.
//!
//! A pairwise example for demonstrator `p` at time `t` compares the taken
//! action `a` against an alternative `a'`:
//! `[ω_p ‖ x̄ᵗ ‖ xₐᵗ − xₐ'ᵗ]` labelled 1, and the swapped comparison
//! `[ω_p ‖ x̄ᵗ ‖ xₐ'ᵗ − xₐᵗ]` labelled 0.

use serde::{Deserialize, Serialize};

use crate::dataset::{DemonstratorId, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framing {
    Pairwise,
    Pointwise,
    Standard,
}

impl std::fmt::Display for Framing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Framing::Pairwise => "pairwise",
            Framing::Pointwise => "pointwise",
            Framing::Standard => "standard",
        })
    }
}

impl std::str::FromStr for Framing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(Framing::Pairwise),
            "pointwise" => Ok(Framing::Pointwise),
            "standard" => Ok(Framing::Standard),
            other => Err(Error::Config(format!("unknown framing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMeta {
    pub demonstrator: DemonstratorId,
    pub timestep: u32,
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub meta: PairMeta,
}

/// Construction options shared by training and the public builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairOptions {
    /// Accept several taken actions; taken–taken pairs are skipped.
    pub multi_label: bool,
    /// Only compare against actions that were legal at this step.
    pub available_only: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            multi_label: false,
            available_only: false,
        }
    }
}

/// `[x̄ ‖ x_first − x_second]`, without the embedding block.
pub fn pair_features(obs: &Observation, first: usize, second: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(obs.context.len() + obs.action_features[first].len());
    out.extend_from_slice(&obs.context);
    out.extend(
        obs.action_features[first]
            .iter()
            .zip(&obs.action_features[second])
            .map(|(a, b)| a - b),
    );
    out
}

/// Ordered `(first, second, label)` comparisons for one observation.
pub fn pair_indices(obs: &Observation, opts: PairOptions) -> Result<Vec<(usize, usize, u8)>> {
    let n = obs.action_count();
    if n < 2 {
        return Err(Error::InvalidArgument("pairwise examples need at least two actions".into()));
    }
    if obs.taken_actions.is_empty() {
        return Err(Error::InvalidArgument("observation has no taken action".into()));
    }
    if obs.taken_actions.len() > 1 && !opts.multi_label {
        return Err(Error::InvalidArgument(
            "multi-label observation in single-label mode".into(),
        ));
    }
    let alternatives: Vec<usize> = if opts.available_only {
        obs.available_actions()
    } else {
        (0..n).collect()
    };
    let mut out = Vec::new();
    for &a in &obs.taken_actions {
        for &b in &alternatives {
            if b == a || obs.taken_actions.contains(&b) {
                continue;
            }
            out.push((a, b, 1));
            out.push((b, a, 0));
        }
    }
    Ok(out)
}

fn with_embedding(embedding: &[f64], rest: Vec<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(embedding.len() + rest.len());
    v.extend_from_slice(embedding);
    v.extend(rest);
    v
}

/// Emits `2(|A| − 1)` examples per single-label observation.
pub fn build_pairwise(
    obs: &Observation,
    embedding: &[f64],
    demonstrator: DemonstratorId,
    opts: PairOptions,
) -> Result<Vec<PairwiseExample>> {
    Ok(pair_indices(obs, opts)?
        .into_iter()
        .map(|(a, b, label)| PairwiseExample {
            features: with_embedding(embedding, pair_features(obs, a, b)),
            label,
            meta: PairMeta {
                demonstrator,
                timestep: obs.timestep,
                first: a,
                second: b,
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    /// Probability per action id; excluded actions hold 0.
    pub probs: Vec<f64>,
    /// Set when every score was zero and a uniform distribution was returned.
    pub degenerate: bool,
}

impl ActionDistribution {
    /// Most probable action, lowest id on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Actions whose probability exceeds `1 / candidates`.
    pub fn above_uniform(&self, candidates: usize) -> Vec<usize> {
        let cut = 1.0 / candidates as f64;
        (0..self.probs.len()).filter(|&a| self.probs[a] > cut).collect()
    }
}

/// Marginalizes pairwise preferences into an action distribution:
/// `P̂(a) = Σ_{a'} f(a, a') / Σ_{a'} Σ_{a''} f(a', a'')`, sums running over
/// `candidates`. Self-comparisons are skipped unless `include_self`.
pub fn predict_action(
    action_count: usize,
    candidates: &[usize],
    include_self: bool,
    mut f: impl FnMut(usize, usize) -> f64,
) -> ActionDistribution {
    let mut probs = vec![0.0; action_count];
    let mut total = 0.0;
    for &a in candidates {
        let mut row = 0.0;
        for &b in candidates {
            if a != b || include_self {
                row += f(a, b);
            }
        }
        probs[a] = row;
        total += row;
    }
    finish_distribution(probs, candidates, total)
}

/// Same marginalization over a dense score matrix `scores[i][j] = f(candidates[i], candidates[j])`.
pub fn marginalize(
    action_count: usize,
    candidates: &[usize],
    scores: &[Vec<f64>],
    include_self: bool,
) -> ActionDistribution {
    let mut probs = vec![0.0; action_count];
    let mut total = 0.0;
    for (i, &a) in candidates.iter().enumerate() {
        let row: f64 = scores[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| include_self || j != i)
            .map(|(_, s)| s)
            .sum();
        probs[a] = row;
        total += row;
    }
    finish_distribution(probs, candidates, total)
}

/// Normalizes non-negative per-action scores over `candidates`.
pub fn normalize_scores(action_count: usize, candidates: &[usize], scores: &[f64]) -> ActionDistribution {
    let mut probs = vec![0.0; action_count];
    let mut total = 0.0;
    for (&a, &s) in candidates.iter().zip(scores) {
        probs[a] = s;
        total += s;
    }
    finish_distribution(probs, candidates, total)
}

fn finish_distribution(mut probs: Vec<f64>, candidates: &[usize], total: f64) -> ActionDistribution {
    if total > 0.0 && total.is_finite() {
        for &a in candidates {
            probs[a] /= total;
        }
        ActionDistribution {
            probs,
            degenerate: false,
        }
    } else {
        let u = 1.0 / candidates.len().max(1) as f64;
        for &a in candidates {
            probs[a] = u;
        }
        ActionDistribution {
            probs,
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseExample {
    pub features: Vec<f64>,
    pub label: u8,
    pub action: usize,
}

/// `[x̄ ‖ x_a]`, without the embedding block.
pub fn point_features(obs: &Observation, action: usize) -> Vec<f64> {
    let mut out = obs.context.clone();
    out.extend_from_slice(&obs.action_features[action]);
    out
}

/// One example per action, labelled 1 iff the action was taken.
pub fn build_pointwise(obs: &Observation, embedding: &[f64]) -> Vec<PointwiseExample> {
    (0..obs.action_count())
        .map(|a| PointwiseExample {
            features: with_embedding(embedding, point_features(obs, a)),
            label: u8::from(obs.taken_actions.contains(&a)),
            action: a,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardExample {
    pub features: Vec<f64>,
    /// Multi-hot over action ids.
    pub target: Vec<f64>,
}

/// `[x̄ ‖ x_{a₁} ‖ … ‖ x_{a|A|}]`, without the embedding block.
pub fn standard_features(obs: &Observation) -> Vec<f64> {
    let mut out = obs.context.clone();
    for f in &obs.action_features {
        out.extend_from_slice(f);
    }
    out
}

pub fn build_standard(obs: &Observation, embedding: &[f64]) -> StandardExample {
    let mut target = vec![0.0; obs.action_count()];
    for &a in &obs.taken_actions {
        target[a] = 1.0;
    }
    StandardExample {
        features: with_embedding(embedding, standard_features(obs)),
        target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(actions: usize, taken: Vec<usize>) -> Observation {
        Observation {
            context: vec![0.5],
            action_features: (0..actions).map(|a| vec![a as f64, -(a as f64) * 0.5]).collect(),
            taken_actions: taken,
            timestep: 3,
            available: None,
        }
    }

    const P: DemonstratorId = DemonstratorId(0);

    #[test]
    fn example_counts() {
        let o = obs(20, vec![4]);
        assert_eq!(build_pairwise(&o, &[0.1], P, PairOptions::default()).unwrap().len(), 38);
        let o = obs(2, vec![0]);
        assert_eq!(build_pairwise(&o, &[], P, PairOptions::default()).unwrap().len(), 2);
    }

    #[test]
    fn swapped_example_negates_difference_only() {
        let o = obs(5, vec![2]);
        let ex = build_pairwise(&o, &[0.3, -0.7], P, PairOptions::default()).unwrap();
        for pair in ex.chunks(2) {
            let (pos, neg) = (&pair[0], &pair[1]);
            assert_eq!((pos.label, neg.label), (1, 0));
            assert_eq!(pos.meta.first, neg.meta.second);
            assert_eq!(pos.features[..3], neg.features[..3]);
            for (x, y) in pos.features[3..].iter().zip(&neg.features[3..]) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn multi_label_rejected_in_single_label_mode() {
        let o = obs(4, vec![0, 1]);
        assert!(build_pairwise(&o, &[], P, PairOptions::default()).is_err());
        let opts = PairOptions {
            multi_label: true,
            ..Default::default()
        };
        // two taken actions, each against the two non-taken ones
        assert_eq!(build_pairwise(&o, &[], P, opts).unwrap().len(), 8);
    }

    #[test]
    fn available_only_restricts_alternatives() {
        let mut o = obs(6, vec![1]);
        o.available = Some(vec![1, 3, 4]);
        let opts = PairOptions {
            available_only: true,
            ..Default::default()
        };
        assert_eq!(build_pairwise(&o, &[], P, opts).unwrap().len(), 4);
    }

    #[test]
    fn constant_scorer_gives_uniform() {
        let d = predict_action(4, &[0, 1, 2, 3], false, |_, _| 0.3);
        for p in &d.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!(!d.degenerate);
    }

    #[test]
    fn hand_evaluated_three_actions() {
        // f(a1,·)=(0.9,0.8), f(a2,·)=(0.1,0.7), f(a3,·)=(0.2,0.3)
        let f = [[0.0, 0.9, 0.8], [0.1, 0.0, 0.7], [0.2, 0.3, 0.0]];
        let d = predict_action(3, &[0, 1, 2], false, |a, b| f[a][b]);
        let expect = [1.7 / 3.0, 0.8 / 3.0, 0.5 / 3.0];
        for (p, e) in d.probs.iter().zip(expect) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!(d.argmax(), 0);
    }

    #[test]
    fn all_zero_scores_flagged_uniform() {
        let d = predict_action(3, &[0, 2], false, |_, _| 0.0);
        assert!(d.degenerate);
        assert_eq!(d.probs, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn pointwise_labels() {
        let ex = build_pointwise(&obs(2, vec![0]), &[]);
        assert_eq!(ex.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
        let ex = build_pointwise(&obs(20, vec![5]), &[1.0]);
        assert_eq!(ex.len(), 20);
        assert_eq!(ex.iter().map(|e| e.label as usize).sum::<usize>(), 1);
    }

    #[test]
    fn standard_feature_length() {
        let o = Observation {
            context: vec![1.0],
            action_features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            taken_actions: vec![0, 1],
            timestep: 0,
            available: None,
        };
        let d = [0.1, 0.2, 0.3];
        let ex = build_standard(&o, &d);
        assert_eq!(ex.features.len(), d.len() + 1 + 4);
        assert_eq!(ex.target, vec![1.0, 1.0]);
    }
}
