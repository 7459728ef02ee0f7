use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{framing_name, version, Domain, ExperimentConfig, ModelKind};
use crate::dataset::DemonstrationSet;
use crate::error::{Error, Result};
use crate::pnn::ScheduleEval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Top-1 next-action accuracy over every test decision.
    pub accuracy: f64,
    /// Mean decision loss over every test decision.
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
    pub crisp_accuracy: Option<f64>,
    pub crisp_loss: Option<f64>,
    pub train_loss: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub domain: Domain,
    pub model: ModelKind,
    pub framing: String,
    pub seeds: Vec<SeedResult>,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std_accuracy: f64,
    pub mean_loss: f64,
    pub crisp_mean_accuracy: Option<f64>,
    pub crisp_mean_loss: Option<f64>,
    /// `confusion[taken][predicted]`, using the first taken action.
    pub confusion: Vec<Vec<u64>>,
    pub wall_clock_secs: f64,
    pub config: ExperimentConfig,
    pub config_fingerprint: String,
    pub dataset_fingerprint: String,
    pub version: String,
    pub failed: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl MetricsReport {
    pub(super) fn start(config: &ExperimentConfig) -> Result<Self> {
        let mut config = config.clone();
        config.hyper = serde_json::to_value(config.resolved()?)?;
        Ok(Self {
            label: config.label(),
            domain: config.domain,
            model: config.model,
            framing: framing_name(config.framing()).to_string(),
            seeds: Vec::new(),
            mean_accuracy: f64::NAN,
            std_accuracy: 0.0,
            mean_loss: f64::NAN,
            crisp_mean_accuracy: None,
            crisp_mean_loss: None,
            confusion: Vec::new(),
            wall_clock_secs: 0.0,
            config_fingerprint: config.fingerprint()?,
            dataset_fingerprint: config.dataset_fingerprint()?,
            config,
            version: version(),
            failed: None,
        })
    }

    pub(super) fn record_confusion(&mut self, test: &DemonstrationSet, evals: &[ScheduleEval]) {
        let n = test.action_count;
        if self.confusion.is_empty() {
            self.confusion = vec![vec![0; n]; n];
        }
        for (s, e) in test.schedules.iter().zip(evals) {
            for (o, &p) in s.observations.iter().zip(&e.predictions) {
                if let Some(&a) = o.taken_actions.first() {
                    self.confusion[a][p] += 1;
                }
            }
        }
    }

    /// Recomputes the summary statistics from the per-seed results.
    pub fn finish(&mut self, wall_clock_secs: f64) {
        let acc: Vec<f64> = self.seeds.iter().map(|s| s.accuracy).collect();
        self.mean_accuracy = mean(&acc);
        self.std_accuracy = sample_std(&acc);
        self.mean_loss = mean(&self.seeds.iter().map(|s| s.loss).collect::<Vec<_>>());
        let crisp: Option<Vec<f64>> = self.seeds.iter().map(|s| s.crisp_accuracy).collect();
        self.crisp_mean_accuracy = crisp.filter(|c| !c.is_empty()).map(|c| mean(&c));
        let crisp_loss: Option<Vec<f64>> = self.seeds.iter().map(|s| s.crisp_loss).collect();
        self.crisp_mean_loss = crisp_loss.filter(|c| !c.is_empty()).map(|c| mean(&c));
        self.wall_clock_secs = wall_clock_secs;
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.accuracy).collect()
    }

    /// Equal up to wall-clock timings.
    pub fn same_results(&self, other: &Self) -> bool {
        let strip = |r: &Self| {
            let mut r = r.clone();
            r.wall_clock_secs = 0.0;
            for s in &mut r.seeds {
                s.wall_clock_secs = 0.0;
            }
            serde_json::to_string(&r).unwrap_or_default()
        };
        strip(self) == strip(other)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub label: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Seeds on which this run beat each other run, summed.
    pub seed_wins: usize,
}

/// Runs sorted by mean accuracy, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub rows: Vec<RankRow>,
    /// `differences[i][j]` = mean of row `i` minus mean of row `j`.
    pub differences: Vec<Vec<f64>>,
    /// `wins[i][j]` = seeds on which row `i` scored strictly higher than row `j`.
    pub wins: Vec<Vec<usize>>,
}

/// Ranks completed runs on the same data.
pub fn compare(reports: &[MetricsReport]) -> Result<Ranking> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two reports".into()));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.dataset_fingerprint != first.dataset_fingerprint {
            return Err(Error::FingerprintMismatch(
                first.dataset_fingerprint.clone(),
                r.dataset_fingerprint.clone(),
            ));
        }
    }
    for r in reports {
        if let Some(f) = &r.failed {
            return Err(Error::InvalidArgument(format!("run {} failed: {f}", r.label)));
        }
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        reports[b]
            .mean_accuracy
            .total_cmp(&reports[a].mean_accuracy)
            .then_with(|| reports[a].label.cmp(&reports[b].label))
    });
    let by_seed = |r: &MetricsReport, seed: u64| r.seeds.iter().find(|s| s.seed == seed).map(|s| s.accuracy);
    let n = order.len();
    let mut differences = vec![vec![0.0; n]; n];
    let mut wins = vec![vec![0; n]; n];
    for (i, &a) in order.iter().enumerate() {
        for (j, &b) in order.iter().enumerate() {
            differences[i][j] = reports[a].mean_accuracy - reports[b].mean_accuracy;
            wins[i][j] = reports[a]
                .seeds
                .iter()
                .filter(|s| by_seed(&reports[b], s.seed).is_some_and(|o| s.accuracy > o))
                .count();
        }
    }
    let rows = order
        .iter()
        .enumerate()
        .map(|(i, &a)| RankRow {
            label: reports[a].label.clone(),
            mean_accuracy: reports[a].mean_accuracy,
            std_accuracy: reports[a].std_accuracy,
            seed_wins: wins[i].iter().sum(),
        })
        .collect();
    Ok(Ranking {
        rows,
        differences,
        wins,
    })
}

impl Ranking {
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:>4}  {:<width$}  {:>8}  {:>7}  {:>9}\n", "rank", "model", "mean", "std", "seed wins");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:>4}  {:<width$}  {:>8.4}  {:>7.4}  {:>9}\n",
                i + 1,
                r.label,
                r.mean_accuracy,
                r.std_accuracy,
                r.seed_wins
            ));
        }
        out
    }
}

/// Columns of the plot table, in order.
pub const PLOT_COLUMNS: [&str; 9] = [
    "label",
    "domain",
    "model",
    "framing",
    "seed",
    "accuracy",
    "loss",
    "crisp_accuracy",
    "wall_clock_secs",
];

/// One `(model, seed)` row of the plot table. `crisp_accuracy` is empty
/// for models without a crisp form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub label: String,
    pub domain: Domain,
    pub model: ModelKind,
    pub framing: String,
    pub seed: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub crisp_accuracy: Option<f64>,
    pub wall_clock_secs: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("plot table: {e}"))
}

/// Writes a comma-separated table with one row per (model, seed).
pub fn emit_plot_data(reports: &[MetricsReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        for s in &r.seeds {
            out.serialize(PlotRow {
                label: r.label.clone(),
                domain: r.domain,
                model: r.model,
                framing: r.framing.clone(),
                seed: s.seed,
                accuracy: s.accuracy,
                loss: s.loss,
                crisp_accuracy: s.crisp_accuracy,
                wall_clock_secs: s.wall_clock_secs,
            })
            .map_err(csv_error)?;
        }
    }
    if reports.iter().all(|r| r.seeds.is_empty()) {
        out.write_record(PLOT_COLUMNS).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_plot_data(r: impl Read) -> Result<Vec<PlotRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header != PLOT_COLUMNS {
        return Err(Error::InvalidArgument(format!("unexpected plot columns {header:?}")));
    }
    rd.deserialize().map(|row| row.map_err(csv_error)).collect()
}
