//! Personalized differentiable decision trees.
//!
//! A balanced soft tree whose decision nodes each read one feature of
//! `[ω ‖ input]`: node `i` goes to its true child with probability
//! `D_i = σ(α_i (w_k x_k − c_k))`, `k = argmax s_i`. A leaf's path probability
//! is the product of the `D_i` / `1 − D_i` along its path, and the output
//! logits are the path-weighted sum of leaf class weights.
//!
//! [`crispify`] turns a trained tree into a [`CrispTree`] with hard branches
//! and one class per leaf; [`CrispTree::render_text`] and
//! [`CrispTree::render_dot`] export it.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dataset::Schedule;
use crate::diffcore::{sigmoid, ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::pnn::{
    AdaptConfig, Architecture, FeatureDims, LearnerOptions, ParamVars, PersonalizedModel, ScheduleEval,
};
use crate::rng::{derive, rng};

/// Parameters of one decision node, one entry per input feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub weights: Vec<ParamId>,
    pub comparisons: Vec<ParamId>,
    /// Selection scores; the forward pass uses their argmax.
    pub scores: Vec<ParamId>,
    pub alpha: ParamId,
}

impl TreeNode {
    /// Index of the feature this node reads.
    pub fn selected(&self, params: &ParamStore) -> usize {
        let mut best = 0;
        for (k, &s) in self.scores.iter().enumerate() {
            if params.value(s) > params.value(self.scores[best]) {
                best = k;
            }
        }
        best
    }

    /// Probability of taking the true branch.
    pub fn decision(&self, params: &ParamStore, x: &[f64]) -> f64 {
        let k = self.selected(params);
        let z = params.value(self.weights[k]) * x[k] - params.value(self.comparisons[k]);
        sigmoid(params.value(self.alpha) * z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub depth: usize,
    /// Use the dense softmax of the selection scores in the backward pass.
    pub straight_through: bool,
    pub initial_alpha: f64,
    /// Standard deviation of the initial leaf class weights.
    pub leaf_init_std: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            straight_through: true,
            initial_alpha: 1.0,
            leaf_init_std: 1.0,
        }
    }
}

/// Balanced soft decision tree. Nodes are stored in heap order: the children
/// of node `i` are `2i + 1` (true) and `2i + 2` (false).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    pub depth: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub nodes: Vec<TreeNode>,
    /// `2^depth` leaves, left to right, each holding per-class weights.
    pub leaves: Vec<Vec<ParamId>>,
    pub straight_through: bool,
}

impl SoftTree {
    pub fn new(inputs: usize, outputs: usize, config: &TreeConfig, params: &mut ParamStore, r: &mut impl Rng) -> Self {
        assert!(config.depth >= 1, "tree depth must be positive");
        let small = Normal::new(0.0, 0.1).expect("valid std");
        let nodes = (0..(1usize << config.depth) - 1)
            .map(|_| TreeNode {
                weights: (0..inputs)
                    .map(|_| params.push(r.gen_range(-1.0..1.0), ParamGroup::Model))
                    .collect(),
                comparisons: (0..inputs)
                    .map(|_| params.push(r.sample(small), ParamGroup::Model))
                    .collect(),
                scores: (0..inputs)
                    .map(|_| params.push(r.sample(small), ParamGroup::Model))
                    .collect(),
                alpha: params.push(config.initial_alpha, ParamGroup::Model),
            })
            .collect();
        let leaf = Normal::new(0.0, config.leaf_init_std).expect("valid std");
        let leaves = (0..1usize << config.depth)
            .map(|_| {
                (0..outputs)
                    .map(|_| params.push(r.sample(leaf), ParamGroup::Model))
                    .collect()
            })
            .collect();
        Self {
            depth: config.depth,
            inputs,
            outputs,
            nodes,
            leaves,
            straight_through: config.straight_through,
        }
    }

    /// Probability of reaching each leaf, left to right.
    pub fn path_probabilities(&self, params: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut level = vec![1.0];
        let mut first = 0;
        for _ in 0..self.depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            for (j, &p) in level.iter().enumerate() {
                let d = self.nodes[first + j].decision(params, x);
                next.push(p * d);
                next.push(p * (1.0 - d));
            }
            first += level.len();
            level = next;
        }
        level
    }

    /// Copy of the parameters with every `α` replaced by `sign(α)·magnitude`.
    pub fn saturated(&self, params: &ParamStore, magnitude: f64) -> ParamStore {
        let mut out = params.clone();
        for n in &self.nodes {
            let a = params.value(n.alpha);
            out.set_value(n.alpha, if a < 0.0 { -magnitude } else { magnitude });
        }
        out
    }
}

impl Architecture for SoftTree {
    fn input_width(&self) -> usize {
        self.inputs
    }

    fn output_width(&self) -> usize {
        self.outputs
    }

    fn record(&self, tape: &mut Tape, vars: &mut ParamVars, input: &[Var]) -> Vec<Var> {
        let one = tape.constant(1.0);
        let mut level = vec![one];
        let mut first = 0;
        for _ in 0..self.depth {
            let mut next = Vec::with_capacity(level.len() * 2);
            for (j, &p) in level.iter().enumerate() {
                let node = &self.nodes[first + j];
                let w: Vec<Var> = node.weights.iter().map(|&id| vars.get(tape, id)).collect();
                let c: Vec<Var> = node.comparisons.iter().map(|&id| vars.get(tape, id)).collect();
                let s: Vec<Var> = node.scores.iter().map(|&id| vars.get(tape, id)).collect();
                let z = tape.select(&w, &c, input, &s, self.straight_through);
                let a = vars.get(tape, node.alpha);
                let az = tape.mul(a, z);
                let d = tape.sigmoid(az);
                let left = tape.mul(p, d);
                next.push(left);
                next.push(tape.sub(p, left));
            }
            first += level.len();
            level = next;
        }
        (0..self.outputs)
            .map(|c| {
                let w: Vec<Var> = self.leaves.iter().map(|l| vars.get(tape, l[c])).collect();
                tape.dot(&level, &w)
            })
            .collect()
    }

    fn eval(&self, params: &ParamStore, input: &[f64]) -> Vec<f64> {
        let paths = self.path_probabilities(params, input);
        (0..self.outputs)
            .map(|c| {
                paths
                    .iter()
                    .zip(&self.leaves)
                    .map(|(p, l)| p * params.value(l[c]))
                    .sum()
            })
            .collect()
    }
}

pub type PddtModel = PersonalizedModel<SoftTree>;

impl PersonalizedModel<SoftTree> {
    pub fn tree(dims: FeatureDims, options: LearnerOptions, config: &TreeConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let inputs = options.embedding_dim + dims.input_width(options.framing);
        let arch = SoftTree::new(
            inputs,
            dims.output_width(options.framing),
            config,
            &mut params,
            &mut rng(derive(seed, 0)),
        );
        Self::new(arch, params, dims, options, seed)
    }

    /// Names of the tree's input features, embedding coordinates first.
    pub fn feature_names(&self) -> Vec<String> {
        crate::pnn::feature_names(self.dims, &self.options)
    }

    pub fn crispify(&self) -> CrispTree {
        crispify(&self.arch, &self.params, self.embedding_dim())
    }

    /// Evaluates a schedule with the crisp tree; the embedding is adapted
    /// through the differentiable tree.
    pub fn evaluate_crisp(&mut self, crisp: &CrispTree, schedule: &Schedule, adapt: &AdaptConfig) -> Result<ScheduleEval> {
        let scorer = |x: &[f64]| crisp.probs(x);
        self.evaluate_schedule_using(schedule, adapt, Some(&scorer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CrispNode {
    Split {
        feature: usize,
        weight: f64,
        threshold: f64,
        /// Child taken when `weight · x[feature] > threshold`.
        yes: usize,
        no: usize,
    },
    Leaf {
        class: usize,
    },
}

/// Hard decision tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrispTree {
    pub nodes: Vec<CrispNode>,
    pub classes: usize,
    /// Features `0..embedding_dim` are embedding coordinates.
    pub embedding_dim: usize,
}

/// Node `i` reads feature `argmax s_i` with its own `w` and `c`; a negative
/// `α` flips the comparison. Each leaf keeps its largest class weight.
pub fn crispify(tree: &SoftTree, params: &ParamStore, embedding_dim: usize) -> CrispTree {
    let internal = tree.nodes.len();
    let mut nodes = Vec::with_capacity(internal + tree.leaves.len());
    for (i, n) in tree.nodes.iter().enumerate() {
        let k = n.selected(params);
        let sign = if params.value(n.alpha) < 0.0 { -1.0 } else { 1.0 };
        nodes.push(CrispNode::Split {
            feature: k,
            weight: sign * params.value(n.weights[k]),
            threshold: sign * params.value(n.comparisons[k]),
            yes: 2 * i + 1,
            no: 2 * i + 2,
        });
    }
    for leaf in &tree.leaves {
        let mut best = 0;
        for (c, &id) in leaf.iter().enumerate() {
            if params.value(id) > params.value(leaf[best]) {
                best = c;
            }
        }
        nodes.push(CrispNode::Leaf { class: best });
    }
    CrispTree {
        nodes,
        classes: tree.outputs,
        embedding_dim,
    }
}

impl CrispTree {
    /// Index of the leaf node reached by `x`.
    pub fn leaf(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                CrispNode::Split {
                    feature,
                    weight,
                    threshold,
                    yes,
                    no,
                } => i = if weight * x[*feature] > *threshold { *yes } else { *no },
                CrispNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        match self.nodes[self.leaf(x)] {
            CrispNode::Leaf { class } => class,
            CrispNode::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }

    /// One-hot class vector.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        p[self.classify(x)] = 1.0;
        p
    }

    /// Number of split nodes reading an embedding coordinate.
    pub fn embedding_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, CrispNode::Split { feature, .. } if *feature < self.embedding_dim))
            .count()
    }

    fn split_label(&self, names: &[String], feature: usize, weight: f64, threshold: f64) -> String {
        let name = names.get(feature).cloned().unwrap_or_else(|| format!("x{feature}"));
        format!("{weight:.4}·{name} > {threshold:.4}")
    }

    /// Indented rendering, one node per line, true branch first. Splits on
    /// embedding coordinates carry a `[style]` tag, the rest `[rule]`.
    pub fn render_text(&self, names: &[String]) -> String {
        let mut out = String::new();
        self.text_node(0, 0, names, &mut out);
        out
    }

    fn text_node(&self, i: usize, indent: usize, names: &[String], out: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.nodes[i] {
            CrispNode::Split {
                feature,
                weight,
                threshold,
                yes,
                no,
            } => {
                let tag = if *feature < self.embedding_dim { "style" } else { "rule" };
                let _ = writeln!(out, "{pad}{} [{tag}]", self.split_label(names, *feature, *weight, *threshold));
                self.text_node(*yes, indent + 1, names, out);
                self.text_node(*no, indent + 1, names, out);
            }
            CrispNode::Leaf { class } => {
                let _ = writeln!(out, "{pad}class {class}");
            }
        }
    }

    /// Graphviz rendering. Embedding splits are filled light blue.
    pub fn render_dot(&self, names: &[String]) -> String {
        let mut out = String::from("digraph tree {\n  node [shape=box];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                CrispNode::Split {
                    feature,
                    weight,
                    threshold,
                    yes,
                    no,
                } => {
                    let label = self.split_label(names, *feature, *weight, *threshold);
                    let style = if *feature < self.embedding_dim {
                        " style=filled fillcolor=lightblue"
                    } else {
                        ""
                    };
                    let _ = writeln!(out, "  n{i} [label=\"{label}\"{style}];");
                    let _ = writeln!(out, "  n{i} -> n{yes} [label=\"true\"];");
                    let _ = writeln!(out, "  n{i} -> n{no} [label=\"false\"];");
                }
                CrispNode::Leaf { class } => {
                    let _ = writeln!(out, "  n{i} [label=\"class {class}\" shape=ellipse];");
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Fraction of `inputs` on which the crisp tree and the soft tree with every
/// `|α|` raised to `magnitude` pick the same class.
pub fn saturation_agreement(tree: &SoftTree, params: &ParamStore, crisp: &CrispTree, magnitude: f64, inputs: &[Vec<f64>]) -> f64 {
    let sat = tree.saturated(params, magnitude);
    let agree = inputs
        .iter()
        .filter(|x| {
            let logits = tree.eval(&sat, x);
            let mut best = 0;
            for (c, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = c;
                }
            }
            best == crisp.classify(x)
        })
        .count();
    agree as f64 / inputs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DemonstratorId;
    use crate::envs::{generate_lowdim, LowDimConfig};
    use approx::assert_abs_diff_eq;

    /// Depth-1 tree over one input: node `w·x − c`, leaf 0 (true) and leaf 1.
    fn stump(w: f64, c: f64, alpha: f64, true_leaf: [f64; 2], false_leaf: [f64; 2]) -> (SoftTree, ParamStore) {
        let mut params = ParamStore::new();
        let tree = SoftTree::new(1, 2, &TreeConfig { depth: 1, ..Default::default() }, &mut params, &mut rng(1));
        let n = &tree.nodes[0];
        params.set_value(n.weights[0], w);
        params.set_value(n.comparisons[0], c);
        params.set_value(n.alpha, alpha);
        for k in 0..2 {
            params.set_value(tree.leaves[0][k], true_leaf[k]);
            params.set_value(tree.leaves[1][k], false_leaf[k]);
        }
        (tree, params)
    }

    #[test]
    fn saturated_stump_picks_the_true_side() {
        let (tree, params) = stump(1.0, 0.0, 100.0, [0.0, 5.0], [5.0, 0.0]);
        let paths = tree.path_probabilities(&params, &[5.0]);
        assert!(paths[0] > 0.999);
        let p = crate::pnn::softmax(&tree.eval(&params, &[5.0]));
        assert!(p[1] > p[0]);
    }

    #[test]
    fn boundary_gives_even_split() {
        let (tree, params) = stump(2.0, 1.0, 3.0, [1.0, 0.0], [0.0, 1.0]);
        assert_eq!(tree.nodes[0].decision(&params, &[0.5]), 0.5);
    }

    #[test]
    fn depth_two_hand_evaluation() {
        let mut params = ParamStore::new();
        let tree = SoftTree::new(2, 2, &TreeConfig { depth: 2, ..Default::default() }, &mut params, &mut rng(4));
        // root reads x0, children read x1
        let set = |params: &mut ParamStore, n: &TreeNode, k: usize, w: f64, c: f64| {
            for (j, &s) in n.scores.iter().enumerate() {
                params.set_value(s, if j == k { 1.0 } else { 0.0 });
            }
            params.set_value(n.weights[k], w);
            params.set_value(n.comparisons[k], c);
            params.set_value(n.alpha, 1.0);
        };
        set(&mut params, &tree.nodes[0], 0, 1.0, 0.5);
        set(&mut params, &tree.nodes[1], 1, 2.0, 0.0);
        set(&mut params, &tree.nodes[2], 1, -1.0, 1.0);
        let leaf_values = [[1.0, 0.0], [0.0, 2.0], [0.5, 0.5], [3.0, -1.0]];
        for (l, v) in tree.leaves.iter().zip(leaf_values) {
            params.set_value(l[0], v[0]);
            params.set_value(l[1], v[1]);
        }
        let x = [0.3, 0.7];
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let d0 = s(0.3 - 0.5);
        let d1 = s(2.0 * 0.7);
        let d2 = s(-0.7 - 1.0);
        let p = [d0 * d1, d0 * (1.0 - d1), (1.0 - d0) * d2, (1.0 - d0) * (1.0 - d2)];
        let expected: Vec<f64> = (0..2)
            .map(|c| (0..4).map(|l| p[l] * leaf_values[l][c]).sum())
            .collect();
        let got = tree.eval(&params, &x);
        for c in 0..2 {
            assert_abs_diff_eq!(got[c], expected[c], epsilon = 1e-12);
        }
        let paths = tree.path_probabilities(&params, &x);
        assert_abs_diff_eq!(paths.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let mut params = ParamStore::new();
        let tree = SoftTree::new(5, 3, &TreeConfig::default(), &mut params, &mut rng(8));
        let x = [0.2, -1.0, 0.7, 3.0, -0.4];
        let mut tape = Tape::new();
        let mut vars = ParamVars::new(&params);
        let input: Vec<Var> = x.iter().map(|&v| tape.constant(v)).collect();
        let out = tree.record(&mut tape, &mut vars, &input);
        for &o in &out {
            tape.output(o);
        }
        let got = tape.forward(&[], &params).unwrap();
        let want = tree.eval(&params, &x);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn stump_crisp_tree_reproduces_boundary() {
        let (tree, params) = stump(2.0, 1.0, 1e6, [0.0, 1.0], [1.0, 0.0]);
        let crisp = crispify(&tree, &params, 0);
        for x in [-3.0, 0.0, 0.49, 0.51, 4.0] {
            let want = usize::from(2.0 * x > 1.0);
            assert_eq!(crisp.classify(&[x]), want, "x = {x}");
        }
    }

    #[test]
    fn negative_alpha_flips_the_crisp_comparison() {
        let (tree, params) = stump(1.0, 0.0, -5.0, [0.0, 1.0], [1.0, 0.0]);
        let crisp = crispify(&tree, &params, 0);
        // α < 0 sends large x to the false side.
        assert_eq!(crisp.classify(&[3.0]), 0);
        assert_eq!(crisp.classify(&[-3.0]), 1);
    }

    #[test]
    fn depth_one_text_has_three_lines() {
        let (tree, params) = stump(1.0, 0.0, 1.0, [0.0, 1.0], [1.0, 0.0]);
        let crisp = crispify(&tree, &params, 0);
        let text = crisp.render_text(&["x".to_string()]);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("1.0000·x > 0.0000 [rule]"));
    }

    #[test]
    fn dot_output_is_well_formed() {
        let mut params = ParamStore::new();
        let tree = SoftTree::new(3, 2, &TreeConfig { depth: 3, ..Default::default() }, &mut params, &mut rng(2));
        let crisp = crispify(&tree, &params, 1);
        let dot = crisp.render_dot(&[]);
        assert!(dot.starts_with("digraph tree {"));
        assert!(dot.trim_end().ends_with('}'));
        let stmt = regex_lite_statement;
        for line in dot.lines().skip(1).filter(|l| l.trim() != "}") {
            assert!(stmt(line.trim()), "bad statement: {line}");
        }
        assert_eq!(dot.matches("->").count(), 2 * tree.nodes.len());
    }

    /// `id [attrs];`, `id -> id [attrs];` or `node [attrs];` with quoted values.
    fn regex_lite_statement(s: &str) -> bool {
        let Some(body) = s.strip_suffix(';') else { return false };
        let (head, attrs) = match body.find('[') {
            Some(i) => (body[..i].trim(), &body[i..]),
            None => (body.trim(), ""),
        };
        let ident = |t: &str| !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        let head_ok = match head.split_once("->") {
            Some((a, b)) => ident(a.trim()) && ident(b.trim()),
            None => ident(head),
        };
        let attrs_ok = attrs.is_empty()
            || (attrs.starts_with('[') && attrs.ends_with(']') && attrs.matches('"').count() % 2 == 0);
        head_ok && attrs_ok
    }

    #[test]
    fn crisp_agrees_with_saturated_tree() {
        let mut params = ParamStore::new();
        let tree = SoftTree::new(4, 2, &TreeConfig::default(), &mut params, &mut rng(5));
        let crisp = crispify(&tree, &params, 2);
        let mut r = rng(6);
        let inputs: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..4).map(|_| r.gen_range(-3.0..3.0)).collect())
            .collect();
        assert!(saturation_agreement(&tree, &params, &crisp, 1e6, &inputs) >= 0.99);
    }

    #[test]
    fn lowdim_tree_trains_and_exports() {
        let data = generate_lowdim(&LowDimConfig {
            schedule_count: 6,
            ..Default::default()
        })
        .unwrap();
        let options = LearnerOptions::default();
        let mut m = PddtModel::tree(FeatureDims::of(&data.set), options, &TreeConfig::default(), 2);
        let report = m
            .train(
                &data.set,
                &crate::diffcore::SgdConfig {
                    epochs: 3,
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(report.loss_curve.iter().all(|l| l.is_finite()));
        let e = m.embedding(DemonstratorId(0)).unwrap().values;
        let d = m.predict(&data.set.schedules[0].observations[0], &e).unwrap();
        assert_abs_diff_eq!(d.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let crisp = m.crispify();
        let text = crisp.render_text(&m.feature_names());
        assert_eq!(text.lines().count(), 31);
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::envs::{generate_lowdim, LowDimConfig};

    #[test]
    fn frozen_selection_gradient_matches_finite_differences() {
        let data = generate_lowdim(&LowDimConfig {
            schedule_count: 3,
            ..Default::default()
        })
        .unwrap();
        let config = TreeConfig {
            depth: 2,
            straight_through: false,
            ..Default::default()
        };
        let mut m = PddtModel::tree(FeatureDims::of(&data.set), LearnerOptions::default(), &config, 7);
        let (_, grads) = m.objective(&data.set).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..m.params.len() {
            let id = ParamId(i as u32);
            let v = m.params.value(id);
            m.params.set_value(id, v + h);
            let (up, _) = m.objective(&data.set).unwrap();
            m.params.set_value(id, v - h);
            let (down, _) = m.objective(&data.set).unwrap();
            m.params.set_value(id, v);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
