//! Command implementations behind the `pocketgfn` binary.

mod checkpoint;
mod commands;
mod config;
mod selfcheck;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT_VERSION};
pub use commands::{cmd_evaluate, cmd_sample, cmd_train, read_molecules, Overrides, SampleOutcome, TrainOutcome};
pub use config::{EvaluationConfig, RunConfig};
pub use selfcheck::{cmd_selfcheck, SelfcheckOptions};
