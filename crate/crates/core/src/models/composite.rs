use std::ops::Range;

use super::backbone::{build_backbone, Backbone, BackboneSpec};
use super::layers::{Dense, Init};
use super::params::ParameterStore;
use super::unet::{build_unet_seeded, Fusion, UNet, UNetSpec};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

/// Backbone and U-Net running side by side on the same input, fused and fed
/// to a linear classifier.
///
/// All parameters live in a single [`ParameterStore`] laid out as
/// `backbone.*`, `unet.*`, `classifier.*`; only `unet.bottleneck.*` is
/// tagged for sharing.
#[derive(Debug, Clone)]
pub struct CompositeModel {
    backbone: Backbone,
    unet: UNet,
    classifier: Dense,
    fusion: Fusion,
    backbone_range: Range<usize>,
    unet_range: Range<usize>,
    head_range: Range<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct CompositeTrace {
    pub f_base: Var,
    pub f_unet: Var,
    pub f_joint: Var,
    pub z: Var,
    pub logits: Var,
}

impl CompositeModel {
    /// `local_seed` initialises everything private to the client;
    /// `shared_seed` initialises the bottleneck.
    pub fn build(
        backbone_spec: &BackboneSpec,
        unet_spec: &UNetSpec,
        local_seed: u64,
        shared_seed: u64,
    ) -> Result<(Self, ParameterStore)> {
        let (backbone, bstore) = build_backbone(backbone_spec, seed::derive(local_seed, "backbone"))?;
        let target = backbone.output_shape();
        let (unet, ustore) = build_unet_seeded(
            unet_spec,
            backbone_spec.input_shape,
            target,
            seed::derive(local_seed, "unet"),
            seed::derive(shared_seed, "unet"),
        )?;
        let [c, h, w] = target;
        let c_joint = match unet_spec.fusion {
            Fusion::Add => c,
            Fusion::Concat => c + target[0],
        };
        let mut hstore = ParameterStore::new();
        let classifier = Init {
            store: &mut hstore,
            seed: seed::derive(local_seed, "classifier"),
            bottleneck: false,
        }
        .dense("fc", c_joint * h * w, backbone_spec.num_classes)?;

        let mut store = ParameterStore::new();
        let b0 = store.absorb("backbone", bstore)?;
        let u0 = store.absorb("unet", ustore)?;
        let h0 = store.absorb("classifier", hstore)?;
        let end = store.len();
        Ok((
            CompositeModel {
                backbone,
                unet,
                classifier,
                fusion: unet_spec.fusion,
                backbone_range: b0..u0,
                unet_range: u0..h0,
                head_range: h0..end,
            },
            store,
        ))
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn num_classes(&self) -> usize {
        self.backbone.spec().num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.backbone.spec().input_shape
    }

    /// Channel count of the fused map fed to the classifier.
    pub fn joint_channels(&self) -> usize {
        let c = self.backbone.output_shape()[0];
        match self.fusion {
            Fusion::Add => c,
            Fusion::Concat => c + self.unet.target_shape()[0],
        }
    }

    /// Flattened width of the classifier input: joint channels times the
    /// backbone's final spatial size.
    pub fn classifier_input_dim(&self) -> usize {
        let [_, h, w] = self.backbone.output_shape();
        self.joint_channels() * h * w
    }

    pub fn trace(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<CompositeTrace> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1..] != self.input_shape() {
            return Err(Error::config(format!(
                "composite input shape {shape:?} does not match [N, {:?}]",
                self.input_shape()
            )));
        }
        let f_base = self.backbone.forward(tape, &bound[self.backbone_range.clone()], x)?;
        let ut = self.unet.trace(tape, &bound[self.unet_range.clone()], x)?;
        let f_joint = match self.fusion {
            Fusion::Add => tape.add(f_base, ut.f_unet)?,
            Fusion::Concat => tape.concat_channels(f_base, ut.f_unet)?,
        };
        let flat = tape.flatten(f_joint)?;
        let logits = self.classifier.forward(tape, &bound[self.head_range.clone()], flat)?;
        Ok(CompositeTrace {
            f_base,
            f_unet: ut.f_unet,
            f_joint,
            z: ut.z,
            logits,
        })
    }

    pub fn forward(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        Ok(self.trace(tape, bound, x)?.logits)
    }

    /// Logits from the backbone path alone, skipping the U-Net. Only
    /// meaningful for add-fusion where the classifier width matches.
    pub fn forward_backbone_only(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        if self.fusion != Fusion::Add {
            return Err(Error::usage("backbone-only logits need add-fusion"));
        }
        let f_base = self.backbone.forward(tape, &bound[self.backbone_range.clone()], x)?;
        let flat = tape.flatten(f_base)?;
        self.classifier.forward(tape, &bound[self.head_range.clone()], flat)
    }

    /// Zeroes the adapter's weight and bias so that `f_unet == 0`.
    pub fn zero_adapter(&self, store: &mut ParameterStore) {
        let (w, b) = self.unet.adapter_slots();
        for slot in [w, b] {
            let name = store
                .names()
                .nth(self.unet_range.start + slot)
                .expect("slot in range")
                .to_string();
            store
                .get_mut(&name)
                .expect("name from store")
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }

    /// Forward, cross-entropy and backward on one batch. Gradients are added
    /// to the store; the batch-mean loss is returned.
    pub fn accumulate_batch_grads(&self, store: &mut ParameterStore, images: Tensor, labels: &[usize]) -> Result<f32> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        let x = tape.leaf(images);
        let logits = self.forward(&mut tape, &bound, x)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        store.accumulate_grads(&tape, &bound);
        Ok(tape.data(loss)[0])
    }

    /// Logits without recording gradients.
    pub fn logits(&self, store: &ParameterStore, images: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(images);
        let logits = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(logits).clone())
    }

    /// Arg-max class per sample.
    pub fn predict(&self, store: &ParameterStore, images: Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(store, images)?;
        let k = self.num_classes();
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f32::NEG_INFINITY),
                        |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                    )
                    .0
            })
            .collect())
    }
}

/// Evaluates the composite on a single batch and returns the logits.
pub fn forward_composite(model: &CompositeModel, store: &ParameterStore, x: Tensor) -> Result<Tensor> {
    model.logits(store, x)
}
