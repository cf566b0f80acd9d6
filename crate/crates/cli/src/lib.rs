//! Command line and HTTP front ends for clipweave.

pub mod cli;
pub mod server;
pub mod service;
