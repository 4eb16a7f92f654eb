//! Backbones, the additive U-Net and the composite model that fuses them.

mod backbone;
mod composite;
mod layers;
mod params;
mod presets;
mod unet;

pub use backbone::{build_backbone, Backbone, BackboneFamily, BackboneSpec};
pub use composite::{forward_composite, CompositeModel, CompositeTrace};
pub use layers::{Conv, Dense};
pub use params::{Manifest, ManifestEntry, ParameterStore};
pub use presets::{backbone_names, backbone_preset, BACKBONE_PRESETS};
pub use unet::{
    build_unet, build_unet_seeded, Fusion, UNet, UNetSpec, UNetTrace, DEFAULT_BOTTLENECK_DIM, UNET_PRESETS,
};
