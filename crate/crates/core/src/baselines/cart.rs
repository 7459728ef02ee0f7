use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartConfig {
    pub max_depth: usize,
    /// Nodes with fewer examples become leaves.
    pub min_samples_split: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub nodes: Vec<CartNode>,
    pub classes: usize,
    pub inputs: usize,
}

fn majority(counts: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = k;
        }
    }
    best
}

fn gini_sum_sq(counts: &[f64]) -> f64 {
    counts.iter().map(|c| c * c).sum()
}

/// Weighted impurity `n·gini = n − Σc²/n`.
fn impurity(n: f64, sum_sq: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else {
        n - sum_sq / n
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    config: CartConfig,
    nodes: Vec<CartNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.classes];
        for &i in idx {
            c[self.y[i]] += 1.0;
        }
        c
    }

    /// Best `(feature, threshold)` by impurity decrease; the lowest feature
    /// and then the lowest threshold win ties.
    fn best_split(&self, idx: &[usize], counts: &[f64]) -> Option<(usize, f64)> {
        let n = idx.len() as f64;
        let parent = impurity(n, gini_sum_sq(counts));
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.x[0].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0.0; self.classes];
            let mut right = counts.to_vec();
            let (mut lsq, mut rsq) = (0.0, gini_sum_sq(counts));
            for k in 0..order.len() - 1 {
                let c = self.y[order[k]];
                lsq += 2.0 * left[c] + 1.0;
                rsq -= 2.0 * right[c] - 1.0;
                left[c] += 1.0;
                right[c] -= 1.0;
                let (v, next) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = (k + 1) as f64;
                let gain = parent - impurity(nl, lsq) - impurity(n - nl, rsq);
                if gain > 1e-9 && best.map_or(true, |(g, _, _)| gain > g + 1e-12) {
                    best = Some((gain, f, 0.5 * (v + next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(CartNode::Leaf { counts: counts.clone() });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.config.max_depth || idx.len() < self.config.min_samples_split.max(2) {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&idx, &counts) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = CartNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Greedy CART with Gini impurity. Thresholds are midpoints between
/// consecutive distinct values.
pub fn fit_cart(x: &[Vec<f64>], y: &[usize], classes: usize, config: &CartConfig) -> Result<CartTree> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("CART needs at least one example".into()));
    }
    if x.len() != y.len() {
        return Err(Error::WidthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let inputs = x[0].len();
    if let Some(row) = x.iter().find(|r| r.len() != inputs) {
        return Err(Error::WidthMismatch {
            expected: inputs,
            got: row.len(),
        });
    }
    if let Some(&c) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::InvalidArgument(format!("label {c} outside {classes} classes")));
    }
    let mut b = Builder {
        x,
        y,
        classes,
        config: *config,
        nodes: Vec::new(),
    };
    b.grow((0..x.len()).collect(), 0);
    Ok(CartTree {
        nodes: b.nodes,
        classes,
        inputs,
    })
}

impl CartTree {
    fn leaf_counts(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                CartNode::Leaf { counts } => return counts,
            }
        }
    }

    /// Class frequencies of the leaf reached by `x`.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let c = self.leaf_counts(x);
        let total: f64 = c.iter().sum();
        c.iter().map(|v| v / total.max(1.0)).collect()
    }

    /// Majority class, lowest index on ties.
    pub fn classify(&self, x: &[f64]) -> usize {
        majority(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[CartNode], i: usize) -> usize {
            match &nodes[i] {
                CartNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                CartNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, CartNode::Leaf { .. })).count()
    }

    /// Features split on, in node order.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                CartNode::Split { feature, .. } => Some(*feature),
                CartNode::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn render_text(&self, names: &[String]) -> String {
        fn walk(t: &CartTree, names: &[String], i: usize, indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match &t.nodes[i] {
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                    out.push_str(&format!("{pad}{name} <= {threshold:.4}\n"));
                    walk(t, names, *left, indent + 1, out);
                    walk(t, names, *right, indent + 1, out);
                }
                CartNode::Leaf { counts } => {
                    out.push_str(&format!("{pad}class {}\n", majority(counts)));
                }
            }
        }
        let mut out = String::new();
        walk(self, names, 0, 0, &mut out);
        out
    }

    /// Graphviz rendering; the left edge is the `<=` branch.
    pub fn render_dot(&self, names: &[String]) -> String {
        let mut out = String::from("digraph tree {\n  node [shape=box];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                    out.push_str(&format!("  n{i} [label=\"{name} <= {threshold:.4}\"];\n"));
                    out.push_str(&format!("  n{i} -> n{left} [label=\"true\"];\n"));
                    out.push_str(&format!("  n{i} -> n{right} [label=\"false\"];\n"));
                }
                CartNode::Leaf { counts } => {
                    out.push_str(&format!("  n{i} [label=\"class {}\" shape=ellipse];\n", majority(counts)));
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_line_splits_at_midpoint() {
        let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 5.0, 6.0].iter().map(|&v| vec![v]).collect();
        let y = [0, 0, 0, 1, 1];
        let t = fit_cart(&x, &y, 2, &CartConfig::default()).unwrap();
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            CartNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 3.5);
            }
            CartNode::Leaf { .. } => panic!("expected a split"),
        }
        assert_eq!(t.classify(&[3.4]), 0);
        assert_eq!(t.classify(&[3.6]), 1);
    }

    #[test]
    fn pure_input_is_a_single_leaf() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let t = fit_cart(&x, &[1, 1], 3, &CartConfig::default()).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.probs(&[9.0, 9.0]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        // both features separate the classes identically
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let t = fit_cart(&x, &[0, 1], 2, &CartConfig::default()).unwrap();
        assert_eq!(t.split_features(), vec![0]);
    }

    #[test]
    fn depth_cap_is_respected() {
        let x: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let t = fit_cart(&x, &y, 2, &CartConfig { max_depth: 2, ..Default::default() }).unwrap();
        assert!(t.depth() <= 2);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(fit_cart(&[], &[], 2, &CartConfig::default()).is_err());
    }
}
