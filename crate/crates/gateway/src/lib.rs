//! Std side of Prometheus: state files, configuration, the HTTP gateway,
//! the administrator CLI and the attack-simulation harness.

pub mod cli;
pub mod clock;
pub mod config;
pub mod formats;
pub mod client;
pub mod gateway;
pub mod harness;
pub mod http;
pub mod simulate;
pub mod state;
pub mod validate;
pub mod wire;

pub use gateway::Gateway;
