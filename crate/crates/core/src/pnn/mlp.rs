use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, ParamVars};
use crate::diffcore::{ParamGroup, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => crate::diffcore::sigmoid(x),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<ParamId>,
    pub bias: Vec<ParamId>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, params: &mut ParamStore, r: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| params.push(r.gen_range(-limit..limit), ParamGroup::Model))
            .collect();
        let bias = (0..outputs).map(|_| params.push(0.0, ParamGroup::Model)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }
}

/// Fully connected network; the last layer is linear (logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `hidden` lists the hidden layer widths.
    pub fn new(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        params: &mut ParamStore,
        r: &mut impl Rng,
    ) -> Self {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], params, r))
            .collect();
        Self { layers, activation }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

impl Architecture for Mlp {
    fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn record(&self, tape: &mut Tape, vars: &mut ParamVars, input: &[Var]) -> Vec<Var> {
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.outputs);
            for o in 0..layer.outputs {
                let row: Vec<Var> = layer.weights[o * layer.inputs..(o + 1) * layer.inputs]
                    .iter()
                    .map(|&id| vars.get(tape, id))
                    .collect();
                let b = vars.get(tape, layer.bias[o]);
                let z = tape.affine(&row, &h, b);
                next.push(if li == last {
                    z
                } else {
                    self.activation.record(tape, z)
                });
            }
            h = next;
        }
        h
    }

    fn eval(&self, params: &ParamStore, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            h = (0..layer.outputs)
                .map(|o| {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let z = row
                        .iter()
                        .zip(&h)
                        .map(|(&id, x)| params.value(id) * x)
                        .sum::<f64>()
                        + params.value(layer.bias[o]);
                    if li == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        h
    }
}
