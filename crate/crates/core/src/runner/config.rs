use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;
use crate::data::BinaryLayout;
use crate::error::{Error, Result};
use crate::federation::AggregationStrategy;
use crate::models::{backbone_preset, BackboneSpec, Fusion, UNetSpec, DEFAULT_BOTTLENECK_DIM};

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        channels: usize,
        height: usize,
        width: usize,
        train_per_class: usize,
        test_per_class: usize,
        noise: f64,
    },
    Binary {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default)]
        layout: BinaryLayout,
        /// Keep only the first `train_limit` training records.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
    },
}

impl DatasetSource {
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            DatasetSource::Synthetic {
                channels,
                height,
                width,
                ..
            } => [*channels, *height, *width],
            DatasetSource::Binary { layout, .. } => [layout.channels, layout.height, layout.width],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSource::Synthetic { classes, .. } => *classes,
            DatasetSource::Binary { layout, .. } => layout.num_classes,
        }
    }
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            classes: 4,
            channels: 3,
            height: 8,
            width: 8,
            train_per_class: 32,
            test_per_class: 16,
            noise: 0.3,
        }
    }
}

/// Backbone of each client: an explicit list cycled over client ids, or a
/// weighted mix handed out in contiguous blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneAssignment {
    List(Vec<String>),
    Mix(BTreeMap<String, usize>),
}

impl Default for BackboneAssignment {
    fn default() -> Self {
        BackboneAssignment::List(vec!["plain-s2".into(), "residual-s2".into()])
    }
}

impl BackboneAssignment {
    /// Preset name of every client.
    pub fn resolve(&self, clients: usize) -> Result<Vec<String>> {
        match self {
            BackboneAssignment::List(names) => {
                if names.is_empty() {
                    return Err(Error::config("backbones: list must not be empty"));
                }
                Ok((0..clients).map(|k| names[k % names.len()].clone()).collect())
            }
            BackboneAssignment::Mix(weights) => {
                let total: usize = weights.values().sum();
                if total == 0 {
                    return Err(Error::config("backbones: mix weights must not all be zero"));
                }
                // largest remainder, ties broken by name order
                let mut counts: Vec<(String, usize, usize)> = weights
                    .iter()
                    .map(|(n, &w)| (n.clone(), w * clients / total, w * clients % total))
                    .collect();
                let mut left = clients - counts.iter().map(|c| c.1).sum::<usize>();
                let mut order: Vec<usize> = (0..counts.len()).collect();
                order.sort_by_key(|&i| std::cmp::Reverse(counts[i].2));
                for i in order {
                    if left == 0 {
                        break;
                    }
                    counts[i].1 += 1;
                    left -= 1;
                }
                Ok(counts
                    .into_iter()
                    .flat_map(|(n, c, _)| std::iter::repeat_n(n, c))
                    .collect())
            }
        }
    }

    fn names(&self) -> Vec<&str> {
        match self {
            BackboneAssignment::List(v) => v.iter().map(String::as_str).collect(),
            BackboneAssignment::Mix(m) => m.keys().map(String::as_str).collect(),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub rounds: usize,
    pub clients: usize,
    pub participants_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: OptimizerKind,
    pub strategy: AggregationStrategy,
    pub alpha: f64,
    pub min_per_client: usize,
    pub backbones: BackboneAssignment,
    pub unet_variant: String,
    /// Overrides the variant's channel width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unet_width: Option<usize>,
    pub bottleneck_dim: usize,
    pub fusion: Fusion,
    pub eval_batch_size: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            rounds: 5,
            clients: 4,
            participants_per_round: 2,
            local_epochs: 1,
            batch_size: 16,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            strategy: AggregationStrategy::FedunetBottleneck,
            alpha: 0.5,
            min_per_client: 2,
            backbones: BackboneAssignment::default(),
            unet_variant: "compact".into(),
            unet_width: None,
            bottleneck_dim: DEFAULT_BOTTLENECK_DIM,
            fusion: Fusion::Add,
            eval_batch_size: 64,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSource::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
    pub clients: Option<usize>,
    pub participants_per_round: Option<usize>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub strategy: Option<AggregationStrategy>,
    pub alpha: Option<f64>,
    pub unet_variant: Option<String>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            seed,
            rounds,
            clients,
            participants_per_round,
            local_epochs,
            batch_size,
            lr,
            strategy,
            alpha,
            unet_variant,
            output_dir
        );
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    /// Parses `text` as keys layered over `base`.
    pub fn layered(base: &ExperimentConfig, text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&base.to_toml_string()?)
            .map_err(|e| Error::config(format!("re-reading base config: {e}")))?;
        let top: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for (k, v) in top {
            match (table.get_mut(&k), v) {
                // a new dataset kind replaces the old table wholesale
                (Some(toml::Value::Table(old)), toml::Value::Table(new))
                    if new.get("kind").is_none() || new.get("kind") == old.get("kind") =>
                {
                    old.extend(new);
                }
                (_, v) => {
                    table.insert(k, v);
                }
            }
        }
        let merged = toml::to_string(&table).map_err(|e| Error::config(e.to_string()))?;
        Self::from_toml_str(&merged)
    }

    pub fn unet_spec(&self) -> Result<UNetSpec> {
        let mut spec = UNetSpec::preset(&self.unet_variant, self.bottleneck_dim, self.fusion)?;
        if let Some(w) = self.unet_width {
            spec.width = w;
        }
        Ok(spec)
    }

    /// `(preset name, spec)` for every client.
    pub fn client_backbones(&self) -> Result<Vec<(String, BackboneSpec)>> {
        let shape = self.dataset.input_shape();
        let classes = self.dataset.num_classes();
        self.backbones
            .resolve(self.clients)?
            .into_iter()
            .map(|n| {
                let spec = backbone_preset(&n, shape, classes).map_err(|e| Error::config(format!("backbones: {e}")))?;
                Ok((n, spec))
            })
            .collect()
    }

    /// Checks every constraint, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("clients", self.clients),
            ("participants_per_round", self.participants_per_round),
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("bottleneck_dim", self.bottleneck_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{key} must be positive")));
            }
        }
        if self.participants_per_round > self.clients {
            return Err(Error::config(format!(
                "participants_per_round = {} exceeds clients = {}",
                self.participants_per_round, self.clients
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be finite and > 0, got {}",
                self.alpha
            )));
        }
        if self.unet_width == Some(0) {
            return Err(Error::config("unet_width must be positive"));
        }
        let unet = self
            .unet_spec()
            .map_err(|e| Error::config(format!("unet_variant: {e}")))?;
        let shape = self.dataset.input_shape();
        unet.validate(shape)
            .map_err(|e| Error::config(format!("unet_variant: {e}")))?;
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                noise,
                ..
            } => {
                if *classes < 2 {
                    return Err(Error::config("dataset.classes must be at least 2"));
                }
                if *train_per_class == 0 || *test_per_class == 0 {
                    return Err(Error::config(
                        "dataset.train_per_class and dataset.test_per_class must be positive",
                    ));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::config("dataset.noise must be finite and >= 0"));
                }
                if self.min_per_client * self.clients > classes * train_per_class {
                    return Err(Error::config(format!(
                        "min_per_client = {} times clients = {} exceeds the {} training samples",
                        self.min_per_client,
                        self.clients,
                        classes * train_per_class
                    )));
                }
            }
            DatasetSource::Binary {
                train, test, layout, ..
            } => {
                if train.is_empty() || test.is_empty() {
                    return Err(Error::config(
                        "dataset.train and dataset.test need at least one file each",
                    ));
                }
                if layout.label_bytes == 0 || layout.pixels() == 0 || layout.num_classes < 2 {
                    return Err(Error::config("dataset.layout is degenerate"));
                }
            }
        }
        for name in self.backbones.names() {
            backbone_preset(name, shape, self.dataset.num_classes())
                .map_err(|e| Error::config(format!("backbones: {e}")))?;
        }
        let specs = self.client_backbones()?;
        if self.strategy == AggregationStrategy::FedavgFull && specs.iter().any(|(_, s)| s != &specs[0].1) {
            return Err(Error::config(
                "strategy = fedavg-full needs a single backbone for all clients",
            ));
        }
        Ok(())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.output_dir.join("metrics.jsonl")
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) if r.start < text.len() => {
            let line = text[..r.start].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        _ => String::new(),
    }
}

/// Layers: preset (or defaults), then the file, then flags; validated.
pub fn parse_config(file: Option<&Path>, preset_name: Option<&str>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let base = match preset_name {
        Some(name) => super::presets::preset(name)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::layered(&base, &text)?
        }
        None => base,
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
