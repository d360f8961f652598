//! User surface: configuration files, experiment orchestration, checkpoint
//! persistence, and report emission.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, checkpoint_load, checkpoint_save, CheckpointModel,
};
pub use commands::{apply_env_seed, cmd_partition, cmd_probe, cmd_report, cmd_run};
pub use config::{DataSource, RunConfig};
