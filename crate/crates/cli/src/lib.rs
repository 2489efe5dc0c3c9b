//! Command-line pipeline (`gen-bench`, `ingest`, `build`, `eval`, `enrich`,
//! `serve`) and the read-only navigation API.

pub mod cli;
pub mod server;

pub use cli::{run, Cli};
