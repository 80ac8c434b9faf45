//! Federated-learning core: a small MLP, local SGD, weighted FedAvg and the
//! binary parameter format stored off-chain.

mod data;
mod fedavg;
mod model;
mod wire;

pub use data::{load_csv_shard, make_synthetic_dataset, DataShard, SyntheticSpec};
pub use fedavg::{fedavg, WeightedUpdate};
pub use model::{
    evaluate, init_model, local_train, loss_and_gradient, mean_loss, ModelParams, ModelShape, TrainConfig,
    TrainOutcome,
};
pub use wire::{deserialize_params, serialize_params, WIRE_MAGIC};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlError {
    #[error("invalid model shape {0:?}")]
    BadShapes(ModelShape),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("aggregation weights sum to zero")]
    AllZeroWeights,
    #[error("aggregation weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("training produced a non-finite loss or weight")]
    NonFiniteLoss,
    #[error("data shard is empty")]
    EmptyShard,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed parameter blob: {0}")]
    Malformed(&'static str),
    #[error("csv: {0}")]
    Csv(String),
}
