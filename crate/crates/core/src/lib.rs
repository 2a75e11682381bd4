//! User-centric cell-free massive MIMO simulator with UE mobility.
//!
//! The crate models an O-RAN style deployment of O-RUs grouped under
//! O-DUs, moves UEs on a wrap-around square, tracks large-scale fading and
//! one-ring spatial correlation over time, and evaluates uplink spectral
//! efficiency under several cluster-formation and handover strategies while
//! counting the signaling each strategy needs.

pub mod channel;
pub mod clustering;
pub mod combining;
pub mod config;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod pilot;
pub mod quadrature;
pub mod rng;
pub mod selftest;
pub mod signaling;
pub mod sim;

pub use error::{Result, SimError};
