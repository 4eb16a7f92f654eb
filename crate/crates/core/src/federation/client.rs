use serde::{Deserialize, Serialize};

use super::wire;
use crate::autodiff::{LocalOptimizer, OptimizerKind};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::models::{BackboneSpec, CompositeModel, Manifest, ParameterStore, UNetSpec};
use crate::seed;

/// Which slice of the model a strategy exchanges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareScope {
    Bottleneck,
    Full,
}

/// Local training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

/// Loss statistics of one local update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub batches: usize,
    pub samples: usize,
    /// Mean of per-batch losses, `None` when no batch ran.
    pub mean_loss: Option<f64>,
}

/// One simulated client: its fixed data slice, composite model, and
/// optimizer state.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    arch: String,
    partition: Vec<usize>,
    model: CompositeModel,
    params: ParameterStore,
    optimizer: LocalOptimizer,
    batch_seed: u64,
    epochs_done: u64,
}

/// Seed that orders a client's minibatches.
pub fn client_batch_seed(master_seed: u64, client_id: usize) -> u64 {
    seed::derive_indexed(master_seed, "client-batches", client_id as u64)
}

/// Seed of a client's private parameters.
pub fn client_init_seed(master_seed: u64, client_id: usize) -> u64 {
    seed::derive_indexed(master_seed, "client-init", client_id as u64)
}

/// Seed of server-owned initial state (the first global bottleneck or model).
pub fn server_init_seed(master_seed: u64) -> u64 {
    seed::derive(master_seed, "server-init")
}

impl ClientState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        arch: impl Into<String>,
        backbone: &BackboneSpec,
        unet: &UNetSpec,
        partition: Vec<usize>,
        optimizer: OptimizerKind,
        lr: f32,
        master_seed: u64,
    ) -> Result<Self> {
        let (model, params) = CompositeModel::build(
            backbone,
            unet,
            client_init_seed(master_seed, id),
            server_init_seed(master_seed),
        )?;
        Ok(ClientState {
            id,
            arch: arch.into(),
            partition,
            model,
            params,
            optimizer: LocalOptimizer::new(optimizer, lr),
            batch_seed: client_batch_seed(master_seed, id),
            epochs_done: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Backbone preset label, used to group evaluation.
    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn model(&self) -> &CompositeModel {
        &self.model
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn optimizer(&self) -> &LocalOptimizer {
        &self.optimizer
    }

    pub fn manifest(&self, scope: ShareScope) -> Manifest {
        match scope {
            ShareScope::Bottleneck => self.params.bottleneck_manifest(),
            ShareScope::Full => self.params.full_manifest(),
        }
    }

    pub fn extract(&self, scope: ShareScope) -> Vec<f32> {
        match scope {
            ShareScope::Bottleneck => self.params.extract_bottleneck().0,
            ShareScope::Full => self.params.extract_all().0,
        }
    }

    pub fn inject(&mut self, values: &[f32], manifest: &Manifest, scope: ShareScope) -> Result<()> {
        match scope {
            ShareScope::Bottleneck => self.params.inject_bottleneck(values, manifest),
            ShareScope::Full => self.params.inject_all(values, manifest),
        }
    }

    /// Decodes a downloaded payload and installs it.
    pub fn receive(&mut self, payload: &[u8], manifest: &Manifest, scope: ShareScope) -> Result<()> {
        let values = wire::decode(payload)?;
        self.inject(&values, manifest, scope)
    }

    /// Encoded upload of the shared slice.
    pub fn upload(&self, scope: ShareScope) -> Vec<u8> {
        wire::encode(&self.extract(scope))
    }

    /// `E` epochs of minibatch steps over the local slice, updating every
    /// parameter from the single classification loss.
    pub fn train_local(&mut self, train: &Dataset, cfg: &LocalTraining) -> Result<TrainStats> {
        if self.partition.is_empty() {
            return Err(Error::data(format!("client {} has an empty partition", self.id)));
        }
        self.optimizer.set_lr(cfg.lr);
        let mut stats = TrainStats::default();
        let mut loss_sum = 0.0f64;
        for _ in 0..cfg.epochs {
            for batch in batches(&self.partition, cfg.batch_size, self.batch_seed, self.epochs_done) {
                let (images, labels) = train.gather(&batch);
                let loss = self.model.accumulate_batch_grads(&mut self.params, images, &labels)?;
                self.optimizer.step(&mut self.params)?;
                loss_sum += loss as f64;
                stats.batches += 1;
                stats.samples += batch.len();
            }
            self.epochs_done += 1;
        }
        if stats.batches > 0 {
            stats.mean_loss = Some(loss_sum / stats.batches as f64);
        }
        Ok(stats)
    }

    /// Fraction of `test` classified correctly, optionally with a shared
    /// slice substituted for the client's own.
    pub fn evaluate(
        &self,
        test: &Dataset,
        substitute: Option<(&[f32], &Manifest, ShareScope)>,
        batch_size: usize,
    ) -> Result<f64> {
        let mut params;
        let store = match substitute {
            Some((values, manifest, scope)) => {
                params = self.params.clone();
                match scope {
                    ShareScope::Bottleneck => params.inject_bottleneck(values, manifest)?,
                    ShareScope::Full => params.inject_all(values, manifest)?,
                }
                &params
            }
            None => &self.params,
        };
        accuracy(&self.model, store, test, batch_size)
    }
}

/// Share of `test` samples whose arg-max prediction matches the label.
pub fn accuracy(model: &CompositeModel, params: &ParameterStore, test: &Dataset, batch_size: usize) -> Result<f64> {
    let all: Vec<usize> = (0..test.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(batch_size.max(1)) {
        let (images, labels) = test.gather(chunk);
        let pred = model.predict(params, images)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Algorithm-level client step: install the global shared vector, train
/// locally, and return only the shared slice.
pub fn client_update(
    state: &mut ClientState,
    train: &Dataset,
    global: &[f32],
    manifest: &Manifest,
    scope: ShareScope,
    cfg: &LocalTraining,
) -> Result<(Vec<f32>, TrainStats)> {
    state.inject(global, manifest, scope)?;
    let stats = state.train_local(train, cfg)?;
    Ok((state.extract(scope), stats))
}
