//! Experiment configuration, presets, the end-to-end driver and its output
//! files.

mod config;
mod presets;
mod summary;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use config::{parse_config, BackboneAssignment, DatasetSource, ExperimentConfig, Overrides};
pub use presets::{preset, PRESET_NAMES};
pub use summary::{comparison_table, emit_summary, format_mb, Summary};

use crate::autodiff::Tensor;
use crate::data::{load_binary_images, partition_dirichlet, Dataset, SyntheticTask};
use crate::error::{Error, Result};
use crate::federation::{ClientState, Federation, FederationSettings, LocalTraining, RoundObserver, RoundRecord};
use crate::seed;

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "FEDUNET_OUTPUT_DIR";

/// One line of the metrics stream.
#[derive(Debug, Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum MetricsLine<'a> {
    Round(&'a RoundRecord),
    Summary(&'a Summary),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
    pub table: String,
}

/// Train and test sets described by the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            channels,
            height,
            width,
            train_per_class,
            test_per_class,
            noise,
        } => {
            let task = SyntheticTask::new(
                *classes,
                [*channels, *height, *width],
                *noise,
                seed::derive(cfg.seed, "synthetic-task"),
            )?;
            Ok((task.sample(*train_per_class, 0)?, task.sample(*test_per_class, 1)?))
        }
        DatasetSource::Binary {
            train,
            test,
            layout,
            train_limit,
        } => {
            let load_all = |paths: &[std::path::PathBuf]| -> Result<Dataset> {
                let parts = paths
                    .iter()
                    .map(|p| load_binary_images(p, layout))
                    .collect::<Result<Vec<_>>>()?;
                concat(&parts)
            };
            let mut tr = load_all(train)?;
            if let Some(limit) = train_limit {
                let keep: Vec<usize> = (0..tr.len().min(*limit)).collect();
                tr = tr.subset(&keep)?;
            }
            Ok((tr, load_all(test)?))
        }
    }
}

fn concat(parts: &[Dataset]) -> Result<Dataset> {
    let first = parts.first().ok_or_else(|| Error::data("no dataset files"))?;
    let [c, h, w] = first.sample_shape();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        data.extend_from_slice(p.images().data());
        labels.extend_from_slice(p.labels());
    }
    Dataset::new(
        Tensor::new(vec![labels.len(), c, h, w], data)?,
        labels,
        first.num_classes(),
    )
}

/// Clients, partition and server state for `cfg`.
pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    let partition = partition_dirichlet(
        train.labels(),
        train.num_classes(),
        cfg.clients,
        cfg.alpha,
        cfg.min_per_client,
        seed::derive(cfg.seed, "partition"),
    )?;
    let unet = cfg.unet_spec()?;
    let clients = cfg
        .client_backbones()?
        .into_iter()
        .enumerate()
        .map(|(k, (name, spec))| {
            ClientState::new(
                k,
                name,
                &spec,
                &unet,
                partition.client(k).to_vec(),
                cfg.optimizer,
                cfg.lr,
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let settings = FederationSettings {
        strategy: cfg.strategy,
        participants: cfg.participants_per_round,
        local: LocalTraining {
            epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
        },
        seed: cfg.seed,
        eval_batch_size: cfg.eval_batch_size,
    };
    Federation::new(clients, train, test, &unet, settings)
}

/// Runs every round of `cfg` in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_observed(cfg, &mut ())
}

pub fn run_experiment_observed(cfg: &ExperimentConfig, observer: &mut dyn RoundObserver) -> Result<ExperimentOutcome> {
    let mut fed = build_federation(cfg)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let r = fed.run_round_observed(observer)?;
        log::info!(
            "{} round {}: accuracy {:.4}, loss {}, up {} B",
            cfg.name,
            r.round,
            r.global_eval_accuracy,
            r.mean_train_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
            r.uploaded_bytes
        );
        records.push(r);
    }
    let (summary, table) = emit_summary(&cfg.name, cfg.strategy.as_str(), &records)?;
    Ok(ExperimentOutcome {
        records,
        summary,
        table,
    })
}

/// Writes `metrics.jsonl`, `accuracy.tsv`, `communication.tsv` and the
/// resolved `config.toml` under `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body).map_err(|e| Error::io(&path, e))
    };

    let mut metrics = String::new();
    for r in &outcome.records {
        metrics += &json_line(&MetricsLine::Round(r))?;
    }
    metrics += &json_line(&MetricsLine::Summary(&outcome.summary))?;
    write("metrics.jsonl", metrics.as_bytes())?;

    let mut acc = String::from("round\taccuracy\n");
    let mut comm = String::from("round\tcumulative_mb\n");
    let mut total = 0u64;
    for r in &outcome.records {
        total += r.uploaded_bytes + r.downloaded_bytes;
        acc += &format!("{}\t{}\n", r.round, r.global_eval_accuracy);
        comm += &format!("{}\t{}\n", r.round, total as f64 / 1e6);
    }
    write("accuracy.tsv", acc.as_bytes())?;
    write("communication.tsv", comm.as_bytes())?;
    write("config.toml", cfg.to_toml_string()?.as_bytes())?;
    Ok(())
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string(v).map_err(|e| Error::usage(format!("encoding metrics: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Output directory after the environment override.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> std::path::PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => dir.into(),
        _ => cfg.output_dir.clone(),
    }
}
