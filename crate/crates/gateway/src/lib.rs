//! HTTP gateway and `imo` command-line client for the model network.

pub mod cli;
pub mod client;
pub mod config;
pub mod envelope;
pub mod server;
