//! Simulated five-device federated training.

mod aggregate;
mod assignment;
mod partition;
mod rounds;
mod transport;

pub use aggregate::{aggregate, anchor_client, fedavg_aggregate, fedma_aggregate, fedma_match_layer, Aggregator, ClientUpdate, LayerMatch};
pub use assignment::{assignment_cost, solve_assignment};
pub use partition::{dirichlet_proportions, partition_dataset, partition_subjects, ClientShard, Partition};
pub use rounds::{local_train, local_train_from, run_federated_training, write_history_jsonl, ClientRecord, FedOutcome, RoundConfig, RoundRecord};
pub use transport::{loopback_transfer, Transport};
