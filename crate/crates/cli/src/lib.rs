//! Config-driven command-line harness around `cckd-core`.

pub mod commands;
pub mod config;
pub mod record;

pub use commands::{cmd_attack, cmd_distill, cmd_eval, cmd_report, cmd_train};
pub use config::{DataSource, RunConfig};
pub use record::RunRecord;
