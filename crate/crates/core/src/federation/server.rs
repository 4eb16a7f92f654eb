use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::aggregate_bottleneck;
use super::client::{accuracy, server_init_seed, ClientState, LocalTraining, ShareScope, TrainStats};
use super::select::select_clients;
use super::wire::{self, CommMeter};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{BackboneSpec, CompositeModel, Manifest, ParameterStore, UNetSpec};
use crate::seed;

/// What the server exchanges with participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationStrategy {
    /// Only the U-Net bottleneck is averaged.
    FedunetBottleneck,
    /// Every parameter is averaged; needs one shared architecture.
    FedavgFull,
    /// No communication at all.
    LocalOnly,
}

impl AggregationStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationStrategy::FedunetBottleneck => "fedunet-bottleneck",
            AggregationStrategy::FedavgFull => "fedavg-full",
            AggregationStrategy::LocalOnly => "local-only",
        }
    }

    pub fn scope(self) -> Option<ShareScope> {
        match self {
            AggregationStrategy::FedunetBottleneck => Some(ShareScope::Bottleneck),
            AggregationStrategy::FedavgFull => Some(ShareScope::Full),
            AggregationStrategy::LocalOnly => None,
        }
    }
}

impl std::fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationSettings {
    pub strategy: AggregationStrategy,
    pub participants: usize,
    pub local: LocalTraining,
    pub seed: u64,
    pub eval_batch_size: usize,
}

/// Accuracy of one evaluation group's designated client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub arch: String,
    pub client_id: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    pub skipped: Vec<usize>,
    pub mean_train_loss: Option<f64>,
    pub global_eval_accuracy: f64,
    pub group_accuracy: Vec<GroupAccuracy>,
    pub uploaded_bytes: u64,
    pub downloaded_bytes: u64,
}

/// Hooks into the round loop, for tests and instrumentation.
pub trait RoundObserver {
    fn before_download(&mut self, _round: usize, _clients: &[ClientState], _participants: &[usize]) {}
    fn after_download(&mut self, _round: usize, _clients: &[ClientState], _participants: &[usize]) {}
    fn after_round(&mut self, _record: &RoundRecord) {}
}

impl RoundObserver for () {}

/// Server state plus the simulated clients it coordinates.
#[derive(Debug)]
pub struct Federation {
    clients: Vec<ClientState>,
    train: Dataset,
    test: Dataset,
    settings: FederationSettings,
    global: Option<(Vec<f32>, Manifest)>,
    meter: CommMeter,
    groups: Vec<(String, usize)>,
    round: usize,
}

/// Parameters the server starts from: a reference composite built from the
/// server seed, whose bottleneck coincides with every client's.
pub fn initial_global(
    backbone: &BackboneSpec,
    unet: &UNetSpec,
    master_seed: u64,
    scope: ShareScope,
) -> Result<(Vec<f32>, Manifest)> {
    let s = server_init_seed(master_seed);
    let (_, store) = CompositeModel::build(backbone, unet, seed::derive(s, "reference"), s)?;
    Ok(match scope {
        ShareScope::Bottleneck => store.extract_bottleneck(),
        ShareScope::Full => store.extract_all(),
    })
}

impl Federation {
    /// `unet` and `reference` (the first client's backbone) fix the initial
    /// global state.
    pub fn new(
        clients: Vec<ClientState>,
        train: Dataset,
        test: Dataset,
        unet: &UNetSpec,
        settings: FederationSettings,
    ) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("federation needs at least one client"));
        }
        if settings.participants == 0 || settings.participants > clients.len() {
            return Err(Error::config(format!(
                "participants_per_round = {} exceeds clients = {} (or is zero)",
                settings.participants,
                clients.len()
            )));
        }
        if clients.iter().enumerate().any(|(i, c)| c.id() != i) {
            return Err(Error::config("client ids must be 0..N in order"));
        }
        let reference = clients[0].model().backbone().spec().clone();
        if settings.strategy == AggregationStrategy::FedavgFull
            && clients.iter().any(|c| c.model().backbone().spec() != &reference)
        {
            return Err(Error::config(
                "fedavg-full requires every client to share one backbone spec",
            ));
        }
        let global = match settings.strategy.scope() {
            Some(scope) => {
                let (values, manifest) = initial_global(&reference, unet, settings.seed, scope)?;
                for c in &clients {
                    if c.manifest(scope) != manifest {
                        return Err(Error::protocol(format!(
                            "client {} has a {} manifest incompatible with the server's",
                            c.id(),
                            settings.strategy
                        )));
                    }
                }
                Some((values, manifest))
            }
            None => None,
        };
        let mut groups: Vec<(String, usize)> = Vec::new();
        for c in &clients {
            if !groups.iter().any(|(a, _)| a == c.arch()) {
                groups.push((c.arch().to_string(), c.id()));
            }
        }
        Ok(Federation {
            clients,
            train,
            test,
            settings,
            global,
            meter: CommMeter::default(),
            groups,
            round: 0,
        })
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn settings(&self) -> &FederationSettings {
        &self.settings
    }

    /// Current global shared vector, `None` for local-only.
    pub fn global(&self) -> Option<&[f32]> {
        self.global.as_ref().map(|(v, _)| v.as_slice())
    }

    pub fn meter(&self) -> CommMeter {
        self.meter
    }

    /// Length of the exchanged vector (0 when nothing is exchanged).
    pub fn vector_len(&self) -> usize {
        self.global.as_ref().map_or(0, |(v, _)| v.len())
    }

    /// Evaluation groups as `(arch, designated client id)`.
    pub fn groups(&self) -> &[(String, usize)] {
        &self.groups
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundRecord> {
        self.run_round_observed(&mut ())
    }

    pub fn run_round_observed(&mut self, observer: &mut dyn RoundObserver) -> Result<RoundRecord> {
        let round = self.round + 1;
        let participants = select_clients(
            seed::derive(self.settings.seed, "selection"),
            round,
            self.clients.len(),
            self.settings.participants,
        )?;
        let start = self.meter;
        let scope = self.settings.strategy.scope();

        observer.before_download(round, &self.clients, &participants);
        if let (Some(scope), Some((values, manifest))) = (scope, &self.global) {
            let payload = wire::encode(values);
            for &id in &participants {
                self.meter.download(&payload);
                self.clients[id].receive(&payload, manifest, scope)?;
            }
        }
        observer.after_download(round, &self.clients, &participants);

        let local = self.settings.local;
        let train = &self.train;
        let mut outcomes: Vec<(usize, Result<TrainStats>)> = self
            .clients
            .par_iter_mut()
            .filter(|c| participants.binary_search(&c.id()).is_ok())
            .map(|c| (c.id(), c.train_local(train, &local)))
            .collect();
        outcomes.sort_by_key(|(id, _)| *id);

        let mut trained = Vec::new();
        let mut skipped = Vec::new();
        let mut losses = Vec::new();
        for (id, outcome) in outcomes {
            match outcome {
                Ok(stats) => {
                    trained.push(id);
                    losses.extend(stats.mean_loss);
                }
                Err(Error::Data(msg)) => {
                    log::warn!("round {round}: skipping client {id}: {msg}");
                    skipped.push(id);
                }
                Err(e) => {
                    return Err(Error::Round {
                        round,
                        message: format!("client {id}: {e}"),
                    })
                }
            }
        }
        if trained.is_empty() {
            return Err(Error::Round {
                round,
                message: "every participant was skipped".into(),
            });
        }

        if let (Some(scope), Some((values, manifest))) = (scope, &mut self.global) {
            let mut uploads = Vec::with_capacity(trained.len());
            for &id in &trained {
                let payload = self.clients[id].upload(scope);
                self.meter.upload(&payload);
                uploads.push(wire::decode(&payload)?);
            }
            let next = aggregate_bottleneck(&uploads)?;
            if next.len() != manifest.len() {
                return Err(Error::protocol("aggregate length differs from the manifest"));
            }
            *values = next;
        }

        let group_accuracy = self.evaluate()?;
        let global_eval_accuracy = group_accuracy.iter().map(|g| g.accuracy).sum::<f64>() / group_accuracy.len() as f64;
        let moved = self.meter.since(&start);
        let record = RoundRecord {
            round,
            participants,
            skipped,
            mean_train_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            global_eval_accuracy,
            group_accuracy,
            uploaded_bytes: moved.uploaded,
            downloaded_bytes: moved.downloaded,
        };
        self.round = round;
        observer.after_round(&record);
        Ok(record)
    }

    /// Runs `rounds` further rounds.
    pub fn run(&mut self, rounds: usize, observer: &mut dyn RoundObserver) -> Result<Vec<RoundRecord>> {
        (0..rounds).map(|_| self.run_round_observed(observer)).collect()
    }

    /// Test accuracy of each group's designated client, with the current
    /// global state substituted when one exists.
    pub fn evaluate(&self) -> Result<Vec<GroupAccuracy>> {
        let scope = self.settings.strategy.scope();
        self.groups
            .iter()
            .map(|(arch, id)| {
                let c = &self.clients[*id];
                let sub = match (scope, &self.global) {
                    (Some(scope), Some((v, m))) => Some((v.as_slice(), m, scope)),
                    _ => None,
                };
                Ok(GroupAccuracy {
                    arch: arch.clone(),
                    client_id: *id,
                    accuracy: c.evaluate(&self.test, sub, self.settings.eval_batch_size)?,
                })
            })
            .collect()
    }
}

/// Pooled minibatch training of a single model on `indices`, starting from
/// the same server state and batch stream a one-client full-model federation
/// uses. Returns the mean loss of every epoch and the final accuracy on `test`.
#[allow(clippy::too_many_arguments)]
pub fn train_centralized(
    backbone: &BackboneSpec,
    unet: &UNetSpec,
    train: &Dataset,
    test: &Dataset,
    indices: Vec<usize>,
    optimizer: crate::autodiff::OptimizerKind,
    local: LocalTraining,
    epochs: usize,
    seed: u64,
) -> Result<(Vec<Option<f64>>, f64)> {
    let mut client = ClientState::new(0, "centralized", backbone, unet, indices, optimizer, local.lr, seed)?;
    let (init, manifest) = initial_global(backbone, unet, seed, ShareScope::Full)?;
    client.inject(&init, &manifest, ShareScope::Full)?;
    let per_epoch = LocalTraining { epochs: 1, ..local };
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        losses.push(client.train_local(train, &per_epoch)?.mean_loss);
    }
    let acc = accuracy(client.model(), client.params(), test, 64)?;
    Ok((losses, acc))
}

/// Snapshot of every non-shared parameter, for bit-equality checks.
pub fn private_snapshot(params: &ParameterStore, scope: ShareScope) -> BTreeMap<String, Vec<u32>> {
    params
        .iter()
        .filter(|(name, _)| scope == ShareScope::Bottleneck && !params.is_bottleneck(name))
        .map(|(name, t)| (name.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}
