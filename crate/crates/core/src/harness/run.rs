use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{MetricsReport, SeedResult};
use super::{fnv_hex, Domain, ExperimentConfig, Hyper, ModelKind};
use crate::baselines::{
    fit_clustered, fit_dt, fit_dt_on_pnn_embeddings, fit_em_dt, plain_ddt, plain_nn, ClusterMethod, ClusterModel,
    ClusterSettings, DtModel, DtOnEmbeddings, EmDtConfig, EmDtModel,
};
use crate::dataset::DemonstrationSet;
use crate::diffcore::SgdConfig;
use crate::envs::{generate_lowdim, generate_scheduling, LowDimConfig};
use crate::error::Result;
use crate::pddt::PddtModel;
use crate::pnn::{save_checkpoint, train_with_restarts, FeatureDims, PnnModel, ScheduleEval};
use crate::rng::derive;

/// A trained model of any family, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "kebab-case")]
pub enum TrainedModel {
    Pnn(PnnModel),
    Pddt(PddtModel),
    Nn(PnnModel),
    Ddt(PddtModel),
    Dt(DtModel),
    KmeansNn(ClusterModel),
    GmmNn(ClusterModel),
    EmDt(EmDtModel),
    DtPnnEmb(DtOnEmbeddings),
}

#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: DemonstrationSet,
    pub test: DemonstrationSet,
}

/// Trained personalized networks shared between runs on the same data,
/// so the embedding tree can reuse the network of a `pnn` run.
#[derive(Debug, Default)]
pub struct ModelCache {
    networks: HashMap<String, PnnModel>,
}

/// Full demonstration set of one seed.
pub fn generate(config: &ExperimentConfig, hyper: &Hyper, seed: u64) -> Result<DemonstrationSet> {
    if let Some(path) = &config.dataset {
        return DemonstrationSet::load(path);
    }
    let count = config.schedule_count();
    Ok(match config.domain {
        Domain::Lowdim => {
            generate_lowdim(&LowDimConfig {
                schedule_count: count,
                seed,
                ..hyper.lowdim.clone()
            })?
            .set
        }
        Domain::Scheduling => generate_scheduling(count, &hyper.sampler, &hyper.scenario, seed)?.set,
    })
}

/// Train and test split of the data for `seed`.
pub fn seed_data(config: &ExperimentConfig, hyper: &Hyper, seed: u64) -> Result<SeedData> {
    let (train, test) = generate(config, hyper, seed)?.split(config.train_fraction, seed)?;
    Ok(SeedData { train, test })
}

fn network_key(config: &ExperimentConfig, hyper: &Hyper, seed: u64) -> Result<String> {
    let key = serde_json::json!({
        "data": config.dataset_fingerprint()?,
        "seed": seed,
        "learner": hyper.learner,
        "sgd": hyper.sgd,
        "mlp": hyper.mlp,
    });
    Ok(fnv_hex(key.to_string().as_bytes()))
}

fn train_network(data: &DemonstrationSet, hyper: &Hyper, sgd: &SgdConfig, seed: u64) -> Result<(PnnModel, f64)> {
    let mut m = PnnModel::mlp(FeatureDims::of(data), hyper.learner.clone(), &hyper.mlp, seed);
    let report = m.train(data, sgd)?;
    Ok((m, report.final_loss(false)))
}

/// Trains the configured model on `data.train`. Returns the model and its
/// final training loss when it has one.
pub fn train_seed(
    config: &ExperimentConfig,
    hyper: &Hyper,
    data: &SeedData,
    seed: u64,
    cache: &mut ModelCache,
) -> Result<(TrainedModel, Option<f64>)> {
    let train = &data.train;
    let dims = FeatureDims::of(train);
    let sgd = SgdConfig {
        seed,
        ..hyper.sgd.clone()
    };
    let learner = &hyper.learner;
    Ok(match config.model {
        ModelKind::Pnn => {
            let (m, loss) = train_network(train, hyper, &sgd, seed)?;
            cache.networks.insert(network_key(config, hyper, seed)?, m.clone());
            (TrainedModel::Pnn(m), Some(loss))
        }
        ModelKind::Nn => {
            let mut m = plain_nn(dims, learner, &hyper.mlp, seed);
            let report = m.train(train, &sgd)?;
            (TrainedModel::Nn(m), Some(report.final_loss(false)))
        }
        ModelKind::Pddt | ModelKind::Ddt => {
            let personal = config.model == ModelKind::Pddt;
            let make = |r: u64| {
                let s = derive(seed, r);
                if personal {
                    PddtModel::tree(dims, learner.clone(), &hyper.tree, s)
                } else {
                    plain_ddt(dims, learner, &hyper.tree, s)
                }
            };
            let (m, report) = train_with_restarts(make, train, &sgd, hyper.restarts)?;
            let loss = report.final_loss(learner.keep_best_epoch);
            if personal {
                (TrainedModel::Pddt(m), Some(loss))
            } else {
                (TrainedModel::Ddt(m), Some(loss))
            }
        }
        ModelKind::Dt => (TrainedModel::Dt(fit_dt(train, learner, &hyper.cart)?), None),
        ModelKind::KmeansNn | ModelKind::GmmNn => {
            let method = if config.model == ModelKind::KmeansNn {
                ClusterMethod::Kmeans
            } else {
                ClusterMethod::Gmm
            };
            let m = fit_clustered(
                train,
                &ClusterSettings {
                    method,
                    k: hyper.clusters,
                    options: learner.clone(),
                    mlp: hyper.mlp.clone(),
                    sgd,
                    seed,
                },
            )?;
            if method == ClusterMethod::Kmeans {
                (TrainedModel::KmeansNn(m), None)
            } else {
                (TrainedModel::GmmNn(m), None)
            }
        }
        ModelKind::EmDt => {
            let em = EmDtConfig {
                modes: hyper.em_modes,
                iterations: hyper.em_iterations,
                cart: hyper.cart,
                framing: config.framing(),
                seed,
            };
            (TrainedModel::EmDt(fit_em_dt(train, learner, &em)?), None)
        }
        ModelKind::DtPnnEmb => {
            let key = network_key(config, hyper, seed)?;
            let pnn = match cache.networks.get(&key) {
                Some(m) => m.clone(),
                None => {
                    let (m, _) = train_network(train, hyper, &sgd, seed)?;
                    cache.networks.insert(key, m.clone());
                    m
                }
            };
            let m = fit_dt_on_pnn_embeddings(&pnn, train, config.framing(), &hyper.cart)?;
            (TrainedModel::DtPnnEmb(m), None)
        }
    })
}

/// Per-schedule evaluations, plus those of the crisp tree for tree models.
pub struct Evaluation {
    pub evals: Vec<ScheduleEval>,
    pub crisp: Option<Vec<ScheduleEval>>,
}

impl TrainedModel {
    pub fn evaluate(&self, test: &DemonstrationSet, hyper: &Hyper, seed: u64) -> Result<Evaluation> {
        let adapt = &hyper.adapt;
        let each = |f: &mut dyn FnMut(&crate::dataset::Schedule) -> Result<ScheduleEval>| -> Result<Vec<ScheduleEval>> {
            test.schedules.iter().map(f).collect()
        };
        let mut crisp = None;
        let evals = match self {
            TrainedModel::Pnn(m) | TrainedModel::Nn(m) => {
                let mut m = m.clone();
                each(&mut |s| m.evaluate_schedule(s, adapt))?
            }
            TrainedModel::Pddt(m) | TrainedModel::Ddt(m) => {
                let mut m = m.clone();
                let tree = m.crispify();
                crisp = Some(each(&mut |s| m.evaluate_crisp(&tree, s, adapt))?);
                each(&mut |s| m.evaluate_schedule(s, adapt))?
            }
            TrainedModel::Dt(m) => each(&mut |s| m.evaluate_schedule(s))?,
            TrainedModel::KmeansNn(m) | TrainedModel::GmmNn(m) => each(&mut |s| m.evaluate_schedule(s, adapt.mode))?,
            TrainedModel::EmDt(m) => each(&mut |s| m.evaluate_schedule(s, adapt.mode, seed))?,
            TrainedModel::DtPnnEmb(m) => each(&mut |s| m.evaluate_schedule(s, adapt))?,
        };
        Ok(Evaluation { evals, crisp })
    }
}

fn totals(evals: &[ScheduleEval]) -> (usize, usize, f64) {
    let correct = evals.iter().map(|e| e.correct).sum();
    let total: usize = evals.iter().map(|e| e.total).sum();
    let loss = evals.iter().map(|e| e.loss * e.total as f64).sum::<f64>() / total.max(1) as f64;
    (correct, total, loss)
}

pub fn run(config: &ExperimentConfig) -> Result<MetricsReport> {
    run_cached(config, &mut ModelCache::default())
}

/// Trains and evaluates every seed of `config`. Configuration problems are
/// returned as errors; a failure inside a seed marks the report failed and
/// keeps the seeds finished before it.
pub fn run_cached(config: &ExperimentConfig, cache: &mut ModelCache) -> Result<MetricsReport> {
    config.validate()?;
    let hyper = config.resolved()?;
    let mut report = MetricsReport::start(config)?;
    let started = Instant::now();
    for &seed in &config.seeds {
        let t = Instant::now();
        let outcome = (|| -> Result<(SeedResult, TrainedModel)> {
            let data = seed_data(config, &hyper, seed)?;
            let (model, train_loss) = train_seed(config, &hyper, &data, seed, cache)?;
            let ev = model.evaluate(&data.test, &hyper, seed)?;
            let (correct, total, loss) = totals(&ev.evals);
            let crisp = ev.crisp.as_deref().map(totals);
            let result = SeedResult {
                seed,
                accuracy: correct as f64 / total.max(1) as f64,
                loss,
                correct,
                total,
                crisp_accuracy: crisp.map(|(c, n, _)| c as f64 / n.max(1) as f64),
                crisp_loss: crisp.map(|(_, _, l)| l),
                train_loss,
                wall_clock_secs: 0.0,
            };
            report.record_confusion(&data.test, &ev.evals);
            Ok((result, model))
        })();
        match outcome {
            Ok((mut result, model)) => {
                result.wall_clock_secs = t.elapsed().as_secs_f64();
                log::info!("{} seed {seed}: accuracy {:.4}", report.label, result.accuracy);
                if let Some(dir) = &config.output_dir {
                    let checkpoints = dir.join("checkpoints");
                    std::fs::create_dir_all(&checkpoints)?;
                    save_checkpoint(&model, checkpoints.join(format!("{}-seed{seed}.json", report.label)))?;
                }
                report.seeds.push(result);
            }
            Err(e) => {
                log::error!("{} seed {seed} failed: {e}", report.label);
                report.failed = Some(format!("seed {seed}: {e}"));
                break;
            }
        }
    }
    report.finish(started.elapsed().as_secs_f64());
    if let Some(dir) = &config.output_dir {
        report.save(dir.join(format!("{}.report.json", report.label)))?;
    }
    Ok(report)
}
