//! Client side of the model bridge.
//!
//! A bridge server owns the neural denoiser and any learned reward; this
//! crate talks to it over TCP using newline-delimited JSON and exposes it
//! through the engine's [`Denoiser`](mdts_core::Denoiser) and
//! [`Reward`](mdts_core::Reward) traits. [`fake`] provides an in-process
//! server for tests and local runs.

mod client;
mod error;
pub mod fake;
pub mod protocol;
mod remote;

pub use client::{BridgeClient, BridgeConfig, ServerInfo, ENDPOINT_ENV};
pub use error::BridgeError;
pub use protocol::PROTOCOL_VERSION;
pub use remote::{remote_denoiser, remote_reward, RemoteDenoiser, RemoteReward};
