//! Library for measuring blowback: unsolicited response traffic that
//! internet scanning attracts back to the scanner.
//!
//! The crate is organized as a pipeline. `probe` plans scan campaigns and
//! writes probe ledgers, `matcher` attributes captured packets to the probes
//! that triggered them, `classifier` turns matched responses into per-target
//! profiles and scan-level summaries, `analysis` covers stability, origin,
//! concentration, loop, and timing questions, `attack` replays measured
//! responses as a time-shifted flood estimate, and `synth` fabricates
//! ground-truth campaigns for validation. The `bbkit` binary exposes each
//! stage as a subcommand.

pub mod analysis;
pub mod attack;
pub mod classifier;
pub mod error;
pub mod matcher;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod synth;

pub use error::{Error, Result};

/// Version stamp embedded in report footers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
