//! Process-level pieces built on `formation-core`: the TCP bridge, scenario files, run logs,
//! the bridged scenario runner, the throughput harness and the command line.

pub mod bridge;
pub mod cli;
pub mod config;
pub mod runlog;
pub mod scenario;
pub mod schema_check;
pub mod stress;
