//! Grant-free SCMA link simulator with a trainable preamble / activity
//! extraction / detection autoencoder.
//!
//! Modules, bottom up: [`scma`] (codebooks and CTUs), [`airlink`] (activity,
//! superposition, AWGN), [`models`] (the three networks), [`training`]
//! (losses and the two training steps), [`evalkit`] (ADER and sweeps) and
//! [`config`] (run configuration).

pub mod airlink;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod models;
pub mod scma;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};
