//! Services, HTTP clients and configuration behind the `fctrace` binary.

pub mod client;
pub mod config;
pub mod reports;
pub mod service;
