use rand::Rng;

use super::params::ParameterStore;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::seed;

/// Registers He-uniform initialised layers into a store. Each tensor draws
/// from its own stream keyed by `(seed, name)`.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParameterStore,
    pub seed: u64,
    pub bottleneck: bool,
}

impl Init<'_> {
    fn he_uniform(&self, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let mut rng = seed::rng(self.seed, name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Conv> {
        let wname = format!("{name}.weight");
        let w = self.he_uniform(&wname, vec![c_out, c_in, k, k], c_in * k * k);
        let weight = self.store.insert(wname, w, self.bottleneck)?;
        let bias = self
            .store
            .insert(format!("{name}.bias"), Tensor::zeros(vec![c_out]), self.bottleneck)?;
        Ok(Conv {
            weight,
            bias,
            padding: k / 2,
        })
    }

    pub fn dense(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Dense> {
        let wname = format!("{name}.weight");
        let w = self.he_uniform(&wname, vec![d_out, d_in], d_in);
        let weight = self.store.insert(wname, w, self.bottleneck)?;
        let bias = self
            .store
            .insert(format!("{name}.bias"), Tensor::zeros(vec![d_out]), self.bottleneck)?;
        Ok(Dense { weight, bias })
    }
}

/// Same-padded stride-1 convolution referring to store slots.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    weight: usize,
    bias: usize,
    padding: usize,
}

impl Conv {
    pub fn forward(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, bound[self.weight], bound[self.bias], 1, self.padding)
    }

    pub fn forward_relu(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        let y = self.forward(tape, bound, x)?;
        tape.relu(y)
    }

    pub(crate) fn weight_slot(&self) -> usize {
        self.weight
    }

    pub(crate) fn bias_slot(&self) -> usize {
        self.bias
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    weight: usize,
    bias: usize,
}

impl Dense {
    pub fn forward(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, bound[self.weight], bound[self.bias])
    }
}
