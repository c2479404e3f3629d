//! Datasets, forget/retain partitioning, synthetic generators and signal ingestion.

mod dataset;
mod partition;
mod signal;
mod synthetic;

pub use dataset::{AccessEvent, AccessLog, DataPart, LabeledDataset, Split};
pub use partition::{normalize_forget_classes, partition_by_class, ForgetPartition};
pub use signal::{
    export_signal_dataset, load_signal_dataset, parse_manifest, window_signal, ManifestRecord,
    SignalLayout, MANIFEST_NAME,
};
pub use synthetic::{
    blob_means, generate_blobs, generate_signals, generate_synthetic_signals, SignalSpec,
};
