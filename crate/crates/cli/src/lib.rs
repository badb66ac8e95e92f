//! Command-line and HTTP front ends for `convis-core`.

pub mod config;
pub mod pipeline;
pub mod server;
