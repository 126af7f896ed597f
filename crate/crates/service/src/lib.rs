//! Remote rendering service: signaling, peer streams, the catalog, and the
//! folder-watching orchestrator.

pub mod catalog;
pub mod channel;
pub mod client;
pub mod config;
pub mod orchestrator;
pub mod packet;
pub mod protocol;
pub mod service;
pub mod session;
pub mod signaling;
pub mod stream;
