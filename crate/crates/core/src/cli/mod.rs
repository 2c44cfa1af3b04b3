//! Config-driven verification commands and their reports.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{run_file, run_text, Command, RunOptions};
pub use report::{Report, Verdict, SCHEMA_VERSION};

use crate::error::Error;

/// 0 pass, 2 check failed, 1 usage, config, or internal error.
pub fn exit_code(result: &Result<Report, Error>) -> i32 {
    match result {
        Ok(r) => r.exit_code(),
        Err(_) => 1,
    }
}
