use std::path::PathBuf;

use super::config::{BackboneAssignment, DatasetSource, ExperimentConfig};
use crate::data::BinaryLayout;
use crate::error::{Error, Result};

pub const PRESET_NAMES: [&str; 8] = [
    "paper-protocol",
    "hetero-intra",
    "hetero-inter",
    "ablation-full",
    "ablation-reduced",
    "ablation-shallow",
    "ablation-compact",
    "desk-smoke",
];

fn list(names: &[&str]) -> BackboneAssignment {
    BackboneAssignment::List(names.iter().map(|s| s.to_string()).collect())
}

fn synthetic(side: usize, train_per_class: usize, test_per_class: usize, noise: f64) -> DatasetSource {
    DatasetSource::Synthetic {
        classes: 4,
        channels: 3,
        height: side,
        width: side,
        train_per_class,
        test_per_class,
        noise,
    }
}

/// Desk-scale federation on the synthetic task; the presets below tweak it.
fn desk(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        rounds: 30,
        clients: 6,
        participants_per_round: 6,
        batch_size: 16,
        lr: 1e-3,
        alpha: 1.0,
        output_dir: PathBuf::from("runs").join(name),
        dataset: synthetic(8, 24, 25, 0.5),
        ..ExperimentConfig::default()
    }
}

/// 16x16 inputs so that depth-4 variants fit. With the flattened-map
/// bottleneck, a larger `d` would make the compact variant's shared slice
/// outgrow the full one's at this resolution.
fn ablation(name: &str, variant: &str) -> ExperimentConfig {
    ExperimentConfig {
        rounds: 10,
        clients: 3,
        participants_per_round: 3,
        backbones: list(&["plain-s2"]),
        unet_variant: variant.into(),
        bottleneck_dim: 32,
        dataset: synthetic(16, 16, 25, 0.3),
        ..desk(name)
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "paper-protocol" => ExperimentConfig {
            name: name.into(),
            rounds: 50,
            clients: 50,
            participants_per_round: 5,
            batch_size: 64,
            lr: 1e-4,
            alpha: 0.5,
            min_per_client: 1,
            backbones: list(&["plain-s3-deep", "residual-s3"]),
            unet_variant: "full".into(),
            output_dir: PathBuf::from("runs").join(name),
            dataset: DatasetSource::Binary {
                train: (1..=5)
                    .map(|i| PathBuf::from(format!("data/cifar-10-batches-bin/data_batch_{i}.bin")))
                    .collect(),
                test: vec![PathBuf::from("data/cifar-10-batches-bin/test_batch.bin")],
                layout: BinaryLayout::CIFAR10,
                train_limit: None,
            },
            ..ExperimentConfig::default()
        },
        "hetero-intra" => ExperimentConfig {
            backbones: list(&["plain-s2", "plain-s3", "plain-s3-deep"]),
            ..desk(name)
        },
        "hetero-inter" => ExperimentConfig {
            backbones: list(&["plain-s2", "residual-s2"]),
            ..desk(name)
        },
        "ablation-full" => ablation(name, "full"),
        "ablation-reduced" => ablation(name, "reduced"),
        "ablation-shallow" => ablation(name, "shallow"),
        "ablation-compact" => ablation(name, "compact"),
        "desk-smoke" => ExperimentConfig {
            rounds: 2,
            clients: 3,
            participants_per_round: 2,
            unet_width: Some(8),
            bottleneck_dim: 16,
            dataset: synthetic(8, 6, 4, 0.3),
            ..desk(name)
        },
        _ => {
            return Err(Error::config(format!(
                "unknown preset {name:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}
