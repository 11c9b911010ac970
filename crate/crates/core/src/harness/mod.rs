//! Configuration, file formats and the command entry points behind the
//! `intentrec` binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{
    checkpoint_name, decode as decode_checkpoint, encode as encode_checkpoint, list_checkpoints, load_checkpoint,
    save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use commands::*;
pub use config::{AnalysisConfig, RunConfig, TrainingConfig};
