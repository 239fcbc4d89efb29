//! Dataset generation, train/test splitting, and client partition regimes.

pub mod dataset;
pub mod schemes;

pub use dataset::{
    dataset_to_string, load_dataset, parse_dataset, save_dataset, synth_dataset, Dataset,
    SynthSpec,
};
pub use schemes::{
    mean_client_label_entropy, partition_manifest, split_dirichlet, split_iid,
    split_iid_few_shot, split_pathological, train_test_split, Partition, PartitionScheme,
    PartitionSpec, SplitOutcome,
};
