use serde::{Deserialize, Serialize};

use super::layers::{Conv, Init};
use super::params::ParameterStore;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneFamily {
    PlainConv,
    Residual,
}

impl BackboneFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneFamily::PlainConv => "plain-conv",
            BackboneFamily::Residual => "residual",
        }
    }
}

/// Architecture of a client's private backbone.
///
/// Every stage ends in a 2x max-pool, so the output map is
/// `[C_last, H / 2^S, W / 2^S]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::config("backbone needs at least one stage"));
        }
        if self.stage_channels.len() != self.blocks_per_stage.len() {
            return Err(Error::config(format!(
                "backbone has {} stage widths but {} block counts",
                self.stage_channels.len(),
                self.blocks_per_stage.len()
            )));
        }
        if self.stage_channels.contains(&0) || self.blocks_per_stage.contains(&0) {
            return Err(Error::config("backbone stage widths and block counts must be positive"));
        }
        if self.num_classes == 0 || self.input_shape.contains(&0) {
            return Err(Error::config("backbone input shape and class count must be positive"));
        }
        let div = 1usize << self.stage_channels.len();
        let [_, h, w] = self.input_shape;
        if h % div != 0 || w % div != 0 {
            return Err(Error::config(format!(
                "backbone input {h}x{w} not divisible by 2^{} for its stages",
                self.stage_channels.len()
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let div = 1usize << self.stage_channels.len();
        let [_, h, w] = self.input_shape;
        [*self.stage_channels.last().expect("validated"), h / div, w / div]
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Plain(Vec<Conv>),
    Residual { entry: Conv, blocks: Vec<(Conv, Conv)> },
}

/// A built backbone network. Parameters live in the store returned next to it.
#[derive(Debug, Clone)]
pub struct Backbone {
    spec: BackboneSpec,
    stages: Vec<Stage>,
}

/// Builds the backbone and its He-uniform initialised parameters.
pub fn build_backbone(spec: &BackboneSpec, rng_seed: u64) -> Result<(Backbone, ParameterStore)> {
    spec.validate()?;
    let mut store = ParameterStore::new();
    let mut init = Init {
        store: &mut store,
        seed: rng_seed,
        bottleneck: false,
    };
    let mut c_prev = spec.input_shape[0];
    let mut stages = Vec::with_capacity(spec.stage_channels.len());
    for (s, (&c, &blocks)) in spec.stage_channels.iter().zip(&spec.blocks_per_stage).enumerate() {
        let stage = match spec.family {
            BackboneFamily::PlainConv => {
                let mut convs = Vec::with_capacity(blocks);
                for b in 0..blocks {
                    let c_in = if b == 0 { c_prev } else { c };
                    convs.push(init.conv(&format!("stage{s}.conv{b}"), c_in, c, 3)?);
                }
                Stage::Plain(convs)
            }
            BackboneFamily::Residual => {
                let entry = init.conv(&format!("stage{s}.entry"), c_prev, c, 3)?;
                let mut pairs = Vec::with_capacity(blocks);
                for b in 0..blocks {
                    let a = init.conv(&format!("stage{s}.block{b}.conv1"), c, c, 3)?;
                    let z = init.conv(&format!("stage{s}.block{b}.conv2"), c, c, 3)?;
                    pairs.push((a, z));
                }
                Stage::Residual { entry, blocks: pairs }
            }
        };
        stages.push(stage);
        c_prev = c;
    }
    Ok((
        Backbone {
            spec: spec.clone(),
            stages,
        },
        store,
    ))
}

impl Backbone {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.spec.output_shape()
    }

    /// `x: [N,C,H,W] -> f_base`
    pub fn forward(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            match stage {
                Stage::Plain(convs) => {
                    for conv in convs {
                        h = conv.forward_relu(tape, bound, h)?;
                    }
                }
                Stage::Residual { entry, blocks } => {
                    h = entry.forward_relu(tape, bound, h)?;
                    for (a, b) in blocks {
                        let r = a.forward_relu(tape, bound, h)?;
                        let r = b.forward(tape, bound, r)?;
                        let sum = tape.add(h, r)?;
                        h = tape.relu(sum)?;
                    }
                }
            }
            h = tape.maxpool2d(h, 2)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn spec(family: BackboneFamily) -> BackboneSpec {
        BackboneSpec {
            family,
            stage_channels: vec![8, 16],
            blocks_per_stage: vec![1, 1],
            input_shape: [3, 8, 8],
            num_classes: 4,
        }
    }

    fn run(spec: &BackboneSpec) -> Vec<usize> {
        let (net, store) = build_backbone(spec, 1).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(Tensor::full(vec![2, 3, 8, 8], 0.5));
        let y = net.forward(&mut tape, &bound, x).unwrap();
        tape.shape(y).to_vec()
    }

    #[test]
    fn plain_and_residual_output_shape() {
        assert_eq!(run(&spec(BackboneFamily::PlainConv)), vec![2, 16, 2, 2]);
        assert_eq!(run(&spec(BackboneFamily::Residual)), vec![2, 16, 2, 2]);
        assert_eq!(spec(BackboneFamily::Residual).output_shape(), [16, 2, 2]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = spec(BackboneFamily::Residual);
        let (_, a) = build_backbone(&s, 11).unwrap();
        let (_, b) = build_backbone(&s, 11).unwrap();
        let (_, c) = build_backbone(&s, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(BackboneFamily::PlainConv);
        s.input_shape = [3, 6, 6];
        assert!(matches!(build_backbone(&s, 0), Err(Error::Config(_))));
        let mut s = spec(BackboneFamily::PlainConv);
        s.blocks_per_stage = vec![1];
        assert!(build_backbone(&s, 0).is_err());
    }
}
