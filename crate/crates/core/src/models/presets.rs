use super::backbone::{BackboneFamily, BackboneSpec};
use crate::error::{Error, Result};

/// Desk-scale backbone presets: `(name, family, stage widths, blocks per stage)`.
///
/// `plain-s2`, `plain-s3` and `plain-s3-deep` stand in for a shallow, medium
/// and deep VGG; the `residual-*` entries for a ResNet. `plain-wide` has
/// VGG-like widths and needs inputs divisible by 16.
pub const BACKBONE_PRESETS: [(&str, BackboneFamily, &[usize], &[usize]); 6] = [
    ("plain-s2", BackboneFamily::PlainConv, &[16, 32], &[1, 1]),
    ("plain-s3", BackboneFamily::PlainConv, &[16, 32, 64], &[1, 1, 1]),
    ("plain-s3-deep", BackboneFamily::PlainConv, &[16, 32, 64], &[2, 2, 2]),
    ("residual-s2", BackboneFamily::Residual, &[16, 32], &[1, 1]),
    ("residual-s3", BackboneFamily::Residual, &[16, 32, 64], &[1, 1, 1]),
    (
        "plain-wide",
        BackboneFamily::PlainConv,
        &[64, 128, 256, 512],
        &[1, 1, 2, 2],
    ),
];

pub fn backbone_preset(name: &str, input_shape: [usize; 3], num_classes: usize) -> Result<BackboneSpec> {
    let (_, family, channels, blocks) = BACKBONE_PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| {
        Error::config(format!(
            "unknown backbone preset {name:?}; known: {}",
            backbone_names().join(", ")
        ))
    })?;
    let spec = BackboneSpec {
        family: *family,
        stage_channels: channels.to_vec(),
        blocks_per_stage: blocks.to_vec(),
        input_shape,
        num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn backbone_names() -> Vec<&'static str> {
    BACKBONE_PRESETS.iter().map(|p| p.0).collect()
}
