use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;

const VARIANCE_FLOOR: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    let Some(first) = points.first() else {
        return Err(Error::InvalidArgument("no points to cluster".into()));
    };
    let d = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::WidthMismatch {
            expected: d,
            got: p.len(),
        });
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub model: KMeans,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each Lloyd iteration.
    pub objective: Vec<f64>,
}

impl KMeans {
    /// Nearest centroid, lowest index on ties.
    pub fn assign(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, m) in self.centroids.iter().enumerate() {
            let d = sq_dist(point, m);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    pub fn objective(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| sq_dist(p, &self.centroids[self.assign(p)])).sum()
    }
}

/// Lloyd's algorithm with k-means++ seeding. Clusters left empty are
/// dropped, so the fitted `k` can be smaller than requested.
pub fn fit_kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KMeansFit> {
    check_points(points, k)?;
    let mut r = rng(seed);
    let mut centroids = vec![points[r.gen_range(0..points.len())].clone()];
    while centroids.len() < k.min(points.len()) {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = r.gen_range(0.0..total);
        let mut pick = d.len() - 1;
        for (i, &v) in d.iter().enumerate() {
            if u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        centroids.push(points[pick].clone());
    }
    let mut model = KMeans { centroids };
    let mut assignments: Vec<usize> = points.iter().map(|p| model.assign(p)).collect();
    let mut objective = Vec::new();
    for _ in 0..max_iter.max(1) {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; model.centroids.len()];
        let mut counts = vec![0usize; model.centroids.len()];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut kept = Vec::new();
        for (c, (s, n)) in sums.into_iter().zip(&counts).enumerate() {
            if *n == 0 {
                log::info!("k-means: cluster {c} empty, dropped");
                continue;
            }
            kept.push(s.into_iter().map(|v| v / *n as f64).collect());
        }
        model.centroids = kept;
        let next: Vec<usize> = points.iter().map(|p| model.assign(p)).collect();
        objective.push(model.objective(points));
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }
    Ok(KMeansFit {
        model,
        assignments,
        objective,
    })
}

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: Gmm,
    /// One row per point, summing to 1.
    pub responsibilities: Vec<Vec<f64>>,
    /// Total log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, p: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|c| {
                let mut l = self.weights[c].ln();
                for ((x, m), v) in p.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                    l -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v);
                }
                l
            })
            .collect()
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| log_sum_exp(&self.log_joint(p))).sum()
    }

    pub fn responsibilities(&self, p: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(p);
        let z = log_sum_exp(&lj);
        lj.into_iter().map(|l| (l - z).exp()).collect()
    }

    /// Most probable component, lowest index on ties.
    pub fn assign(&self, p: &[f64]) -> usize {
        let lj = self.log_joint(p);
        let mut best = 0;
        for (c, &v) in lj.iter().enumerate() {
            if v > lj[best] {
                best = c;
            }
        }
        best
    }
}

/// EM for a diagonal mixture, initialized from k-means. Stops after
/// `max_iter` iterations or when the log-likelihood gains less than 1e-9.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<GmmFit> {
    let dim = check_points(points, k)?;
    let km = fit_kmeans(points, k, 100, seed)?;
    let k = km.model.centroids.len();
    let n = points.len() as f64;
    let mut resp: Vec<Vec<f64>> = km
        .assignments
        .iter()
        .map(|&a| (0..k).map(|c| if c == a { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut model = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: km.model.centroids.clone(),
        variances: vec![vec![1.0; dim]; k],
    };
    let mut log_likelihood = Vec::new();
    for it in 0..max_iter.max(1) {
        // M step
        for c in 0..k {
            let nc: f64 = resp.iter().map(|r| r[c]).sum();
            if nc <= 0.0 {
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = nc / n;
            for j in 0..dim {
                let m = resp.iter().zip(points).map(|(r, p)| r[c] * p[j]).sum::<f64>() / nc;
                let v = resp.iter().zip(points).map(|(r, p)| r[c] * (p[j] - m).powi(2)).sum::<f64>() / nc;
                model.means[c][j] = m;
                model.variances[c][j] = v.max(VARIANCE_FLOOR);
            }
        }
        // E step
        resp = points.iter().map(|p| model.responsibilities(p)).collect();
        let ll = model.log_likelihood(points);
        let done = it > 0 && ll - log_likelihood.last().copied().unwrap_or(f64::NEG_INFINITY) < 1e-9;
        log_likelihood.push(ll);
        if done {
            break;
        }
    }
    Ok(GmmFit {
        model,
        responsibilities: resp,
        log_likelihood,
    })
}
