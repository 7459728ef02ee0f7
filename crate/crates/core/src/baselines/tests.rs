use super::*;
use crate::dataset::{DemonstratorId, DomainTag};
use crate::envs::{generate_lowdim, LowDimConfig, Mode};

fn lowdim(count: usize, seed: u64) -> (DemonstrationSet, Vec<Mode>) {
    let d = generate_lowdim(&LowDimConfig {
        schedule_count: count,
        seed,
        ..Default::default()
    })
    .unwrap();
    (d.set, d.modes)
}

fn quick_sgd() -> SgdConfig {
    SgdConfig {
        epochs: 3,
        ..Default::default()
    }
}

#[test]
fn single_cluster_matches_plain_network() {
    let (data, _) = lowdim(8, 1);
    let options = LearnerOptions::default();
    let settings = ClusterSettings {
        method: ClusterMethod::Kmeans,
        k: 1,
        options: options.clone(),
        mlp: MlpConfig::default(),
        sgd: quick_sgd(),
        seed: 4,
    };
    let clustered = fit_clustered(&data, &settings).unwrap();
    let mut plain = plain_nn(FeatureDims::of(&data), &options, &MlpConfig::default(), 4);
    plain.train(&data, &quick_sgd()).unwrap();
    assert_eq!(clustered.models.len(), 1);
    assert_eq!(clustered.models[0].params, plain.params);
    let gmm = fit_clustered(
        &data,
        &ClusterSettings {
            method: ClusterMethod::Gmm,
            ..settings
        },
    )
    .unwrap();
    assert_eq!(gmm.models[0].params, plain.params);
}

/// Two demonstrator types that always pick different actions.
fn two_type_set() -> (DemonstrationSet, Vec<usize>) {
    let mut set = DemonstrationSet::empty(DomainTag::Generic, 2, 1, 1);
    let mut types = Vec::new();
    for i in 0..10u32 {
        let kind = (i % 2) as usize;
        let observations = (0..6)
            .map(|t| Observation {
                context: vec![t as f64],
                action_features: vec![vec![0.0], vec![1.0]],
                taken_actions: vec![kind],
                timestep: t,
                available: None,
            })
            .collect();
        set.schedules.push(Schedule {
            demonstrator_id: DemonstratorId(i),
            observations,
        });
        types.push(kind);
    }
    (set, types)
}

#[test]
fn separable_summaries_are_recovered() {
    let (data, types) = two_type_set();
    for method in [ClusterMethod::Kmeans, ClusterMethod::Gmm] {
        let model = fit_clustered(
            &data,
            &ClusterSettings {
                method,
                k: 2,
                options: LearnerOptions::default(),
                mlp: MlpConfig::default(),
                sgd: quick_sgd(),
                seed: 2,
            },
        )
        .unwrap();
        let routed: Vec<usize> = data.schedules.iter().map(|s| model.route(&s.observations)).collect();
        for (r, t) in routed.iter().zip(&types) {
            assert_eq!((*r == routed[0]), (*t == types[0]));
        }
        // each network saw about half of the data
        for &n in &model.cluster_sizes {
            assert!((n - 5.0).abs() < 1e-6, "{method:?}: {n}");
        }
    }
}

#[test]
fn summary_combines_mean_features_and_histogram() {
    let (data, _) = two_type_set();
    let s = demonstrator_summary(&data.schedules[1].observations, 2).unwrap();
    assert_eq!(s, vec![1.0, 0.0, 1.0]);
    assert!(demonstrator_summary(&[], 2).is_none());
}

#[test]
fn em_dt_single_mode_is_absorbed() {
    let (mut data, modes) = lowdim(30, 3);
    data.schedules = data
        .schedules
        .into_iter()
        .zip(&modes)
        .filter(|(_, m)| **m == Mode::One)
        .map(|(s, _)| s)
        .collect();
    let model = fit_em_dt(&data, &LearnerOptions::default(), &EmDtConfig::default()).unwrap();
    let sizes = model.mode_sizes();
    let top = *sizes.iter().max().unwrap() as f64;
    assert!(top >= 0.9 * data.schedules.len() as f64, "{sizes:?}");
}

#[test]
fn em_dt_is_deterministic() {
    let (data, _) = lowdim(12, 5);
    let a = fit_em_dt(&data, &LearnerOptions::default(), &EmDtConfig::default()).unwrap();
    let b = fit_em_dt(&data, &LearnerOptions::default(), &EmDtConfig::default()).unwrap();
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.tree, b.tree);
    for p in &a.mode_probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn plain_tree_guesses_on_lowdim() {
    // large enough that the test split holds both modes in similar numbers
    let (data, _) = lowdim(200, 1);
    let (train, test) = data.split(0.8, 1).unwrap();
    let options = LearnerOptions {
        framing: Framing::Standard,
        ..Default::default()
    };
    let dt = fit_dt(&train, &options, &CartConfig::default()).unwrap();
    let acc = accuracy(&test, |s| dt.evaluate_schedule(s)).unwrap();
    assert!((0.4..0.65).contains(&acc), "accuracy {acc}");
}

#[test]
fn embedding_tree_needs_personalized_network() {
    let (data, _) = lowdim(4, 1);
    let nn = plain_nn(FeatureDims::of(&data), &LearnerOptions::default(), &MlpConfig::default(), 1);
    assert!(fit_dt_on_pnn_embeddings(&nn, &data, Framing::Standard, &CartConfig::default()).is_err());
}
