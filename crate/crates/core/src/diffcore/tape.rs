//! Append-only scalar tape for reverse-mode differentiation.
//!
//! Nodes are recorded first and evaluated later: [`Tape::forward`] walks the
//! node list once, storing each value together with the local partials of the
//! node with respect to its operands, and [`Tape::backward`] replays the
//! list in reverse, accumulating upstream gradients into the [`ParamStore`].
//! Operands always precede the node that reads them, so a single reverse sweep
//! visits every node exactly once.

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Input(u32),
    Const,
    Param(ParamId),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Max,
    Sigmoid,
    Tanh,
    Relu,
    Sum,
    Dot,
    Select { straight_through: bool },
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Max => "max",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sum => "sum",
            Op::Dot => "dot",
            Op::Select { .. } => "select",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    start: u32,
    len: u32,
    konst: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    args: Vec<u32>,
    values: Vec<f64>,
    partials: Vec<f64>,
    grads: Vec<f64>,
    outputs: Vec<Var>,
    input_count: usize,
    evaluated: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.args.clear();
        self.values.clear();
        self.partials.clear();
        self.grads.clear();
        self.outputs.clear();
        self.input_count = 0;
        self.evaluated = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, operands: &[Var], konst: f64) -> Var {
        let start = self.args.len() as u32;
        self.args.extend(operands.iter().map(|v| v.0));
        self.nodes.push(Node {
            op,
            start,
            len: operands.len() as u32,
            konst,
        });
        self.evaluated = false;
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn input(&mut self, slot: usize) -> Var {
        self.input_count = self.input_count.max(slot + 1);
        self.push(Op::Input(slot as u32), &[], 0.0)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, &[], value)
    }

    pub fn constants(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.constant(v)).collect()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), &[], 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add, &[a, b], 0.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub, &[a, b], 0.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul, &[a, b], 0.0)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div, &[a, b], 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg, &[a], 0.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp, &[a], 0.0)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log, &[a], 0.0)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Max, &[a, b], 0.0)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let na = self.neg(a);
        let nb = self.neg(b);
        let m = self.max(na, nb);
        self.neg(m)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid, &[a], 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh, &[a], 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu, &[a], 0.0)
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        self.push(Op::Sum, xs, 0.0)
    }

    /// Inner product of two equal-length operand lists.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let mut operands = Vec::with_capacity(a.len() * 2);
        operands.extend_from_slice(a);
        operands.extend_from_slice(b);
        self.push(Op::Dot, &operands, 0.0)
    }

    /// `Σ w·x + b`.
    pub fn affine(&mut self, weights: &[Var], inputs: &[Var], bias: Var) -> Var {
        let d = self.dot(weights, inputs);
        self.add(d, bias)
    }

    /// Single-feature comparison `w[k]·x[k] − c[k]` with `k = argmax(scores)`
    /// (ties resolve to the lowest index).
    ///
    /// With `straight_through` set, the backward pass replaces the one-hot
    /// selector by `softmax(scores)`, so every coordinate of `w`, `c`, `x` and
    /// `scores` receives gradient. Without it the partials are the exact ones
    /// of the one-hot forward function and `scores` receives none.
    pub fn select(
        &mut self,
        weights: &[Var],
        comparisons: &[Var],
        inputs: &[Var],
        scores: &[Var],
        straight_through: bool,
    ) -> Var {
        let n = weights.len();
        assert!(
            comparisons.len() == n && inputs.len() == n && scores.len() == n,
            "select operands differ in length"
        );
        let mut operands = Vec::with_capacity(4 * n);
        operands.extend_from_slice(weights);
        operands.extend_from_slice(comparisons);
        operands.extend_from_slice(inputs);
        operands.extend_from_slice(scores);
        self.push(Op::Select { straight_through }, &operands, 0.0)
    }

    /// Numerically stable softmax composed from `max`, `sub`, `exp`, `sum`, `div`.
    pub fn softmax(&mut self, logits: &[Var]) -> Vec<Var> {
        assert!(!logits.is_empty());
        let mut m = logits[0];
        for &l in &logits[1..] {
            m = self.max(m, l);
        }
        let exps: Vec<Var> = logits
            .iter()
            .map(|&l| {
                let shifted = self.sub(l, m);
                self.exp(shifted)
            })
            .collect();
        let total = self.sum(&exps);
        exps.iter().map(|&e| self.div(e, total)).collect()
    }

    /// Marks `v` as an output; outputs are returned by `forward` in marking order.
    pub fn output(&mut self, v: Var) {
        self.outputs.push(v);
    }

    pub fn outputs(&self) -> &[Var] {
        &self.outputs
    }

    pub fn value(&self, v: Var) -> f64 {
        assert!(self.evaluated, "value read before forward");
        self.values[v.index()]
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluated
    }

    /// Gradient of the last backward pass with respect to node `v`.
    pub fn grad(&self, v: Var) -> f64 {
        self.grads.get(v.index()).copied().unwrap_or(0.0)
    }

    pub fn forward(&mut self, inputs: &[f64], params: &ParamStore) -> Result<Vec<f64>> {
        if inputs.len() < self.input_count {
            return Err(Error::InputCount {
                expected: self.input_count,
                got: inputs.len(),
            });
        }
        self.evaluated = false;
        self.values.clear();
        self.values.resize(self.nodes.len(), 0.0);
        self.partials.clear();
        self.partials.resize(self.args.len(), 0.0);

        for i in 0..self.nodes.len() {
            let node = self.nodes[i];
            let s = node.start as usize;
            let n = node.len as usize;
            for k in s..s + n {
                if self.args[k] as usize >= i {
                    return Err(Error::InvalidOperand {
                        node: i,
                        index: self.args[k] as usize,
                    });
                }
            }
            let arg = |k: usize| self.values[self.args[s + k] as usize];
            let domain = |value: f64| Error::Domain {
                node: i,
                op: node.op.name(),
                value,
            };
            let value = match node.op {
                Op::Input(slot) => inputs[slot as usize],
                Op::Const => node.konst,
                Op::Param(id) => {
                    if id.index() >= params.len() {
                        return Err(Error::InvalidOperand {
                            node: i,
                            index: id.index(),
                        });
                    }
                    params.value(id)
                }
                Op::Add => {
                    self.partials[s] = 1.0;
                    self.partials[s + 1] = 1.0;
                    arg(0) + arg(1)
                }
                Op::Sub => {
                    self.partials[s] = 1.0;
                    self.partials[s + 1] = -1.0;
                    arg(0) - arg(1)
                }
                Op::Mul => {
                    let (a, b) = (arg(0), arg(1));
                    self.partials[s] = b;
                    self.partials[s + 1] = a;
                    a * b
                }
                Op::Div => {
                    let (a, b) = (arg(0), arg(1));
                    if b == 0.0 {
                        return Err(domain(b));
                    }
                    self.partials[s] = 1.0 / b;
                    self.partials[s + 1] = -a / (b * b);
                    a / b
                }
                Op::Neg => {
                    self.partials[s] = -1.0;
                    -arg(0)
                }
                Op::Exp => {
                    let e = arg(0).exp();
                    self.partials[s] = e;
                    e
                }
                Op::Log => {
                    let a = arg(0);
                    if a <= 0.0 || a.is_nan() {
                        return Err(domain(a));
                    }
                    self.partials[s] = 1.0 / a;
                    a.ln()
                }
                Op::Max => {
                    let (a, b) = (arg(0), arg(1));
                    if a >= b {
                        self.partials[s] = 1.0;
                        a
                    } else {
                        self.partials[s + 1] = 1.0;
                        b
                    }
                }
                Op::Sigmoid => {
                    let y = sigmoid(arg(0));
                    self.partials[s] = y * (1.0 - y);
                    y
                }
                Op::Tanh => {
                    let y = arg(0).tanh();
                    self.partials[s] = 1.0 - y * y;
                    y
                }
                Op::Relu => {
                    let a = arg(0);
                    if a > 0.0 {
                        self.partials[s] = 1.0;
                        a
                    } else {
                        0.0
                    }
                }
                Op::Sum => {
                    let mut acc = 0.0;
                    for k in 0..n {
                        self.partials[s + k] = 1.0;
                        acc += arg(k);
                    }
                    acc
                }
                Op::Dot => {
                    let h = n / 2;
                    let mut acc = 0.0;
                    for k in 0..h {
                        let (a, b) = (arg(k), arg(h + k));
                        self.partials[s + k] = b;
                        self.partials[s + h + k] = a;
                        acc += a * b;
                    }
                    acc
                }
                Op::Select { straight_through } => self.forward_select(s, n / 4, straight_through),
            };
            self.values[i] = value;
        }
        self.evaluated = true;
        Ok(self.outputs.iter().map(|v| self.values[v.index()]).collect())
    }

    fn forward_select(&mut self, s: usize, f: usize, straight_through: bool) -> f64 {
        let val = |k: usize| self.values[self.args[s + k] as usize];
        let (w0, c0, x0, s0) = (0, f, 2 * f, 3 * f);
        let scores: Vec<f64> = (0..f).map(|k| val(s0 + k)).collect();
        let chosen = argmax_lowest(&scores);
        let out = val(w0 + chosen) * val(x0 + chosen) - val(c0 + chosen);
        if straight_through {
            let m = scores[chosen];
            let exps: Vec<f64> = scores.iter().map(|&z| (z - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
            let u: Vec<f64> = (0..f)
                .map(|k| val(w0 + k) * val(x0 + k) - val(c0 + k))
                .collect();
            let mean: f64 = probs.iter().zip(&u).map(|(p, u)| p * u).sum();
            for k in 0..f {
                let (w, x) = (val(w0 + k), val(x0 + k));
                self.partials[s + w0 + k] = probs[k] * x;
                self.partials[s + c0 + k] = -probs[k];
                self.partials[s + x0 + k] = probs[k] * w;
                self.partials[s + s0 + k] = probs[k] * (u[k] - mean);
            }
        } else {
            self.partials[s + w0 + chosen] = val(x0 + chosen);
            self.partials[s + c0 + chosen] = -1.0;
            self.partials[s + x0 + chosen] = val(w0 + chosen);
        }
        out
    }

    /// Propagates `upstream[j]` from the `j`-th marked output back to every
    /// node, then adds the result into the gradients of trainable parameters.
    pub fn backward(&mut self, upstream: &[f64], params: &mut ParamStore) -> Result<()> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        if upstream.len() != self.outputs.len() {
            return Err(Error::WidthMismatch {
                expected: self.outputs.len(),
                got: upstream.len(),
            });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), 0.0);
        for (v, g) in self.outputs.iter().zip(upstream) {
            self.grads[v.index()] += g;
        }
        for i in (0..self.nodes.len()).rev() {
            let g = self.grads[i];
            let node = self.nodes[i];
            if let Op::Param(id) = node.op {
                params.accumulate(id, g);
                continue;
            }
            if g == 0.0 {
                continue;
            }
            let s = node.start as usize;
            for k in s..s + node.len as usize {
                self.grads[self.args[k] as usize] += g * self.partials[k];
            }
        }
        Ok(())
    }
}
