//! On-disk formats: checkpoints, preprocess caches and metric tables.

mod checkpoint;
pub mod envelope;
mod metrics;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, SchedulePosition, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use envelope::write_atomic;
pub use metrics::{export_metrics, read_metrics, MetricRecord, METRICS_HEADER};
