//! Data generation and IDX ingestion, run configuration, checkpoints,
//! metrics, and the command entry points.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod metrics;

pub use checkpoint::{Checkpoint, EpisodeCursor};
pub use commands::{
    eval_cmd, gen_data, inspect_checkpoint, train_cmd, EvalOptions, EvalSummary, Resume, TrainOutcome,
};
pub use config::RunConfig;
pub use data::{
    build_dataset, draw_glyph, gen_synthetic_pair, load_idx, parse_idx, Dataset, DatasetSpec, Pairing, Source,
    Split,
};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter};
