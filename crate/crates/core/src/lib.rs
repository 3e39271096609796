//! Hero-Gang sequence labeling.
//!
//! A transformer encoder (the *Hero*) produces one contextual vector per
//! token. The *Gang* re-reads those vectors through several sliding windows,
//! encoding each token's neighbourhood with a bidirectional recurrent cell.
//! Multi-window attention fuses the global and local views before a per-token
//! softmax classifier.
//!
//! ```text
//! tokens -> Hero -> z ---------------------+
//!                   |                      v
//!                   +-> Gang(w1..wM) -> h1..hM -> fusion -> s -> classifier -> tags
//! ```

pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gang;
pub mod hero;
pub mod model;
pub mod numerics;
pub mod tagger;
pub mod train;

pub use error::{HgnError, Result};
