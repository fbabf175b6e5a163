//! The `stt-lab` command line: data generation, pre-training, few-shot
//! adaptation runs, sweeps and parameter accounting.

pub mod args;
mod commands;
pub mod report;

pub use args::Cli;
pub use commands::{count_breakdown, run};

use stt_core::Error;

/// Process exit status for an error: 1 configuration, 2 input/output or
/// corrupt files, 3 numeric failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Checkpoint(_) | Error::Parse { .. } => 2,
        Error::NonFiniteLoss { .. } | Error::NonFinite(_) => 3,
        _ => 1,
    }
}
