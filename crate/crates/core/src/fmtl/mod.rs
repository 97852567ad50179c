//! Federated multi-task learning on BSA-labelled pilot data.

pub mod checkpoint;
pub mod dataset;
pub mod network;
pub mod training;

pub use checkpoint::Checkpoint;
pub use dataset::{build_dataset, build_partitioned, DatasetSpec, Label, LocalDataset, Partition, Sample};
pub use network::{Architecture, Batch, LossBreakdown, Network, TaskWeights, REFERENCE_CNN_PARAMETER_COUNT};
pub use training::{
    federated_round, noisy_transmit, predict_channel_and_doa, train, Trainer, TrainingConfig, TrainingMode,
    TrainingReport,
};
