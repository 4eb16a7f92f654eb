use serde::{Deserialize, Serialize};

use super::layers::{Conv, Dense, Init};
use super::params::ParameterStore;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// How the backbone and U-Net feature maps are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    #[default]
    Add,
    Concat,
}

/// Shape of the additive U-Net.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    /// Number of down/up sampling levels.
    pub depth: usize,
    /// Channels of every conv block.
    pub width: usize,
    /// Length of the bottleneck vector z.
    pub bottleneck_dim: usize,
    pub fusion: Fusion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_name: Option<String>,
}

/// Named variants: `(name, depth, width)`.
pub const UNET_PRESETS: [(&str, usize, usize); 4] = [
    ("full", 4, 64),
    ("reduced", 4, 32),
    ("shallow", 2, 64),
    ("compact", 2, 32),
];

pub const DEFAULT_BOTTLENECK_DIM: usize = 64;

impl UNetSpec {
    pub fn preset(name: &str, bottleneck_dim: usize, fusion: Fusion) -> Result<Self> {
        let (_, depth, width) = UNET_PRESETS.iter().find(|(n, _, _)| *n == name).ok_or_else(|| {
            let names: Vec<_> = UNET_PRESETS.iter().map(|p| p.0).collect();
            Error::config(format!("unknown U-Net variant {name:?}; known: {}", names.join(", ")))
        })?;
        Ok(UNetSpec {
            depth: *depth,
            width: *width,
            bottleneck_dim,
            fusion,
            variant_name: Some(name.to_string()),
        })
    }

    pub fn validate(&self, input_shape: [usize; 3]) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.bottleneck_dim == 0 {
            return Err(Error::config("U-Net depth, width and bottleneck_dim must be positive"));
        }
        let div = 1usize.checked_shl(self.depth as u32).unwrap_or(0);
        let [c, h, w] = input_shape;
        if c == 0 || div == 0 || h % div != 0 || w % div != 0 || h < div || w < div {
            return Err(Error::config(format!(
                "U-Net depth {} needs input dims divisible by 2^{}, got {h}x{w}",
                self.depth, self.depth
            )));
        }
        Ok(())
    }

    /// `[width, H / 2^depth, W / 2^depth]`
    pub fn coarsest_shape(&self, input_shape: [usize; 3]) -> [usize; 3] {
        let div = 1usize << self.depth;
        [self.width, input_shape[1] / div, input_shape[2] / div]
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv,
    conv2: Conv,
    to_z: Dense,
    from_z: Dense,
}

/// Encoder, shared bottleneck, decoder with skip connections, and the
/// client-local adapter that reshapes the decoder output to the backbone's
/// feature map.
#[derive(Debug, Clone)]
pub struct UNet {
    spec: UNetSpec,
    input_shape: [usize; 3],
    target_shape: [usize; 3],
    coarse: [usize; 3],
    encoder: Vec<(Conv, Conv)>,
    bottleneck: Bottleneck,
    decoder: Vec<(Conv, Conv)>,
    adapter: Conv,
}

/// Intermediate values of one U-Net pass.
#[derive(Debug, Clone, Copy)]
pub struct UNetTrace {
    pub coarse: Var,
    pub z: Var,
    pub f_unet: Var,
}

pub fn build_unet(
    spec: &UNetSpec,
    input_shape: [usize; 3],
    target_feature_shape: [usize; 3],
    rng_seed: u64,
) -> Result<(UNet, ParameterStore)> {
    build_unet_seeded(spec, input_shape, target_feature_shape, rng_seed, rng_seed)
}

/// As [`build_unet`], with the bottleneck drawn from its own seed.
pub fn build_unet_seeded(
    spec: &UNetSpec,
    input_shape: [usize; 3],
    target_feature_shape: [usize; 3],
    local_seed: u64,
    bottleneck_seed: u64,
) -> Result<(UNet, ParameterStore)> {
    spec.validate(input_shape)?;
    if target_feature_shape.contains(&0) {
        return Err(Error::config(format!(
            "U-Net target feature shape {target_feature_shape:?} has a zero dim"
        )));
    }
    let [_, th, tw] = target_feature_shape;
    if th > input_shape[1] || tw > input_shape[2] {
        return Err(Error::config(format!(
            "U-Net target {th}x{tw} exceeds input {}x{}",
            input_shape[1], input_shape[2]
        )));
    }
    let w = spec.width;
    let coarse = spec.coarsest_shape(input_shape);
    let flat = coarse.iter().product();
    let mut store = ParameterStore::new();

    // Creation order fixes the canonical parameter order: encoder,
    // bottleneck, decoder, adapter.
    let mut local = Init {
        store: &mut store,
        seed: local_seed,
        bottleneck: false,
    };
    let mut encoder = Vec::with_capacity(spec.depth);
    for level in 0..spec.depth {
        let c_in = if level == 0 { input_shape[0] } else { w };
        let a = local.conv(&format!("enc{level}.conv1"), c_in, w, 3)?;
        let b = local.conv(&format!("enc{level}.conv2"), w, w, 3)?;
        encoder.push((a, b));
    }

    let mut shared = Init {
        store: &mut store,
        seed: bottleneck_seed,
        bottleneck: true,
    };
    let bottleneck = Bottleneck {
        conv1: shared.conv("bottleneck.conv1", w, w, 3)?,
        conv2: shared.conv("bottleneck.conv2", w, w, 3)?,
        to_z: shared.dense("bottleneck.to_z", flat, spec.bottleneck_dim)?,
        from_z: shared.dense("bottleneck.from_z", spec.bottleneck_dim, flat)?,
    };

    let mut local = Init {
        store: &mut store,
        seed: local_seed,
        bottleneck: false,
    };
    let mut decoder = Vec::with_capacity(spec.depth);
    for level in 0..spec.depth {
        let a = local.conv(&format!("dec{level}.conv1"), 2 * w, w, 3)?;
        let b = local.conv(&format!("dec{level}.conv2"), w, w, 3)?;
        decoder.push((a, b));
    }
    let adapter = local.conv("adapter", w, target_feature_shape[0], 1)?;

    Ok((
        UNet {
            spec: spec.clone(),
            input_shape,
            target_shape: target_feature_shape,
            coarse,
            encoder,
            bottleneck,
            decoder,
            adapter,
        },
        store,
    ))
}

impl UNet {
    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn target_shape(&self) -> [usize; 3] {
        self.target_shape
    }

    pub fn coarsest_shape(&self) -> [usize; 3] {
        self.coarse
    }

    /// Store slots of the adapter's weight and bias.
    pub(crate) fn adapter_slots(&self) -> (usize, usize) {
        (self.adapter.weight_slot(), self.adapter.bias_slot())
    }

    pub fn forward(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<Var> {
        Ok(self.trace(tape, bound, x)?.f_unet)
    }

    pub fn trace(&self, tape: &mut Tape<f32>, bound: &[Var], x: Var) -> Result<UNetTrace> {
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut h = x;
        for (a, b) in &self.encoder {
            h = a.forward_relu(tape, bound, h)?;
            h = b.forward_relu(tape, bound, h)?;
            skips.push(h);
            h = tape.maxpool2d(h, 2)?;
        }

        let bn = &self.bottleneck;
        h = bn.conv1.forward_relu(tape, bound, h)?;
        h = bn.conv2.forward_relu(tape, bound, h)?;
        let coarse = h;
        let n = tape.shape(h)[0];
        let flat = tape.flatten(h)?;
        let z = bn.to_z.forward(tape, bound, flat)?;
        let up = bn.from_z.forward(tape, bound, z)?;
        let up = tape.relu(up)?;
        let [c, ch, cw] = self.coarse;
        h = tape.reshape(up, vec![n, c, ch, cw])?;

        for (level, (a, b)) in self.decoder.iter().enumerate().rev() {
            h = tape.upsample_nearest(h, 2)?;
            h = tape.concat_channels(h, skips[level])?;
            h = a.forward_relu(tape, bound, h)?;
            h = b.forward_relu(tape, bound, h)?;
        }

        // avg-pool and a 1x1 conv commute, pooling first is cheaper
        let [_, th, tw] = self.target_shape;
        h = tape.adaptive_avgpool(h, th, tw)?;
        let f_unet = self.adapter.forward(tape, bound, h)?;
        Ok(UNetTrace { coarse, z, f_unet })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn spec(depth: usize, width: usize, d: usize) -> UNetSpec {
        UNetSpec {
            depth,
            width,
            bottleneck_dim: d,
            fusion: Fusion::Add,
            variant_name: None,
        }
    }

    #[test]
    fn coarsest_map_and_z_shapes() {
        let s = spec(2, 4, 16);
        let (net, store) = build_unet(&s, [3, 8, 8], [16, 2, 2], 5).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(Tensor::full(vec![3, 3, 8, 8], 0.25));
        let tr = net.trace(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.shape(tr.coarse), &[3, 4, 2, 2]);
        assert_eq!(tape.shape(tr.z), &[3, 16]);
        assert_eq!(tape.shape(tr.f_unet), &[3, 16, 2, 2]);
    }

    #[test]
    fn bottleneck_count_matches_closed_form() {
        let s = spec(2, 32, 64);
        let (net, store) = build_unet(&s, [3, 8, 8], [16, 2, 2], 0).unwrap();
        assert_eq!(net.coarsest_shape(), [32, 2, 2]);
        let conv_pair = (32 * 32 * 9 + 32) * 2;
        let to_z = 128 * 64 + 64;
        let from_z = 64 * 128 + 128;
        assert_eq!(conv_pair + to_z + from_z, 35_072);
        assert_eq!(store.count_bottleneck(), 35_072);
        assert_eq!(store.bottleneck_names().len(), 8);
        assert!(store.bottleneck_names().iter().all(|n| n.starts_with("bottleneck.")));
    }

    #[test]
    fn bottleneck_independent_of_target_shape() {
        let s = spec(2, 8, 12);
        let (_, a) = build_unet(&s, [3, 8, 8], [16, 2, 2], 9).unwrap();
        let (_, b) = build_unet(&s, [3, 8, 8], [32, 1, 1], 9).unwrap();
        assert_eq!(a.extract_bottleneck(), b.extract_bottleneck());
        assert_ne!(a.full_manifest(), b.full_manifest());
    }

    #[test]
    fn rejects_bad_dims() {
        let s = spec(3, 4, 4);
        assert!(matches!(
            build_unet(&s, [3, 12, 12], [4, 1, 1], 0),
            Err(Error::Config(_))
        ));
        let s = spec(2, 4, 4);
        assert!(matches!(build_unet(&s, [3, 8, 8], [4, 0, 1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn presets_exist() {
        let full = UNetSpec::preset("full", 64, Fusion::Add).unwrap();
        assert_eq!((full.depth, full.width), (4, 64));
        let compact = UNetSpec::preset("compact", 64, Fusion::Add).unwrap();
        assert_eq!((compact.depth, compact.width), (2, 32));
        let reduced = UNetSpec::preset("reduced", 64, Fusion::Add).unwrap();
        assert_eq!((reduced.depth, reduced.width), (4, 32));
        let shallow = UNetSpec::preset("shallow", 64, Fusion::Add).unwrap();
        assert_eq!((shallow.depth, shallow.width), (2, 64));
        assert!(UNetSpec::preset("huge", 64, Fusion::Add).is_err());
    }
}
