//! Hybrid beamformer design for mmWave multiuser MISO downlinks.
//!
//! The transmitter is a uniform planar array driven by a small number of RF
//! chains. Each RF chain is connected, through a switch network, to a disjoint
//! subset of antennas (a *dynamic subarray*), and each antenna carries one
//! B-bit phase shifter of fixed magnitude `1/sqrt(Nt)`. This crate provides:
//!
//! - clustered multipath channel generation over the planar array ([`channel`]),
//! - the quantized-phase codebook and the sparse analog beamformer with its
//!   binary selection-matrix encoding ([`codebook`]),
//! - SINR / sum-rate / transmit-power / energy-efficiency evaluation ([`metrics`]),
//! - a duality-based digital beamformer solver (cyclic self-SINR maximization
//!   plus water-filling on the dual uplink) ([`duality`]),
//! - the fractional-programming designer with auxiliary-variable updates, a
//!   discrete analog step and a closed-form digital step ([`fp`]),
//! - a row-wise exhaustive heuristic designer ([`heuristic`]),
//! - fully-digital and fixed-subarray reference schemes ([`baselines`]),
//! - a seeded Monte-Carlo experiment harness with CSV/JSONL output ([`harness`]).
//!
//! All randomness flows from a single master seed through documented
//! per-trial, per-user sub-streams, so every experiment is reproducible
//! independently of thread count or execution order.

pub mod baselines;
pub mod channel;
pub mod codebook;
pub mod design;
pub mod duality;
pub mod fp;
pub mod harness;
pub mod heuristic;
pub mod metrics;

mod rowscan;

pub use channel::{ArrayGeometry, ChannelSet, PathParams};
pub use codebook::{AnalogBeamformer, PhaseCodebook, SelectionMatrix};
pub use design::{DesignResult, TraceRecord};
pub use duality::{CssmOpts, DualState};
pub use metrics::{Architecture, PowerModel};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
