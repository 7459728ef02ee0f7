use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Which learning rate a parameter is stepped with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Model,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: f64,
    pub grad: f64,
    pub trainable: bool,
    pub group: ParamGroup,
    /// Set by a backward pass that reached this parameter; cleared by the optimizer.
    #[serde(skip)]
    pub(crate) touched: bool,
}

impl Parameter {
    pub fn new(value: f64, group: ParamGroup) -> Self {
        Self {
            value,
            grad: 0.0,
            trainable: true,
            group,
            touched: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64, group: ParamGroup) -> ParamId {
        self.params.push(Parameter::new(value, group));
        ParamId(self.params.len() as u32 - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> f64 {
        self.params[id.index()].value
    }

    pub fn set_value(&mut self, id: ParamId, value: f64) {
        self.params[id.index()].value = value;
    }

    pub fn grad(&self, id: ParamId) -> f64 {
        self.params[id.index()].grad
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i as u32), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: f64) {
        let p = &mut self.params[id.index()];
        if p.trainable {
            p.grad += g;
            p.touched = true;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = 0.0;
            p.touched = false;
        }
    }

    /// Marks every parameter of `group` trainable or frozen.
    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.trainable = trainable;
        }
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.index()].trainable = trainable;
    }

    /// FNV-1a over the bit patterns of all values in `group`.
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| p.group == group) {
            for b in p.value.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}
