//! Round-based training of heterogeneous clients that share only the U-Net
//! bottleneck, with full-model and no-communication baselines.

mod aggregate;
mod client;
mod select;
mod server;
pub mod wire;

pub use aggregate::aggregate_bottleneck;
pub use client::{
    accuracy, client_batch_seed, client_init_seed, client_update, server_init_seed, ClientState, LocalTraining,
    ShareScope, TrainStats,
};
pub use select::select_clients;
pub use server::{
    initial_global, private_snapshot, train_centralized, AggregationStrategy, Federation, FederationSettings,
    GroupAccuracy, RoundObserver, RoundRecord,
};
pub use wire::CommMeter;
