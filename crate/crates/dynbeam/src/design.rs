//! Shared designer output types and the common initialization used by both
//! iterative designers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::codebook::{AnalogBeamformer, CodebookError, PhaseCodebook};
use crate::duality::{self, CssmOpts, DualityError};
use crate::metrics;
use crate::C64;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Duality(#[from] DualityError),
    #[error("exact analog search space {space:.3e} exceeds budget {budget:.3e}")]
    BudgetExceeded { space: f64, budget: f64 },
}

/// One per-iteration diagnostic record. Fields not tracked by a given
/// designer are `None` and omitted from the JSON-lines trace export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub sum_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changed_rows: Option<usize>,
}

/// Converged beamformer pair plus the per-iteration trace.
#[derive(Debug, Clone)]
pub struct DesignResult {
    /// Materialized analog beamformer (identity for the fully-digital scheme).
    pub f_rf: DMatrix<C64>,
    /// Compact analog representation, when the scheme has one.
    pub analog: Option<AnalogBeamformer>,
    pub f_bb: DMatrix<C64>,
    pub sum_rate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

/// Fixed contiguous partition: antenna `i` goes to chain `i * n_rf / nt`.
pub fn contiguous_partition(nt: usize, n_rf: usize) -> Vec<usize> {
    (0..nt).map(|i| i * n_rf / nt).collect()
}

/// Deterministic starting analog beamformer: the contiguous partition with
/// each antenna's phase aligned to the strongest user's channel entry,
/// quantized to the codebook grid.
pub fn initial_analog(
    channels: &ChannelSet,
    n_rf: usize,
    codebook: &PhaseCodebook,
) -> Result<AnalogBeamformer, CodebookError> {
    let strongest = (0..channels.num_users())
        .max_by(|&a, &b| {
            channels
                .channel(a)
                .norm()
                .partial_cmp(&channels.channel(b).norm())
                .unwrap()
        })
        .expect("channel set has at least one user");
    let h = channels.channel(strongest);
    let partition = contiguous_partition(channels.nt(), n_rf);
    let assignment = (0..channels.nt())
        .map(|i| (partition[i], codebook.nearest_phase_index(h[i].arg())))
        .collect();
    AnalogBeamformer::new(n_rf, assignment, codebook.clone())
}

/// Duality-based starting digital beamformer on the effective channel of the
/// given analog stage, normalized to the power budget.
pub fn initial_digital(
    channels: &ChannelSet,
    f_rf: &DMatrix<C64>,
    total_power: f64,
    cssm: &CssmOpts,
) -> Result<DMatrix<C64>, DualityError> {
    let eff = metrics::effective_channels(channels, f_rf);
    let dual = duality::cssm_solve(&eff, channels.noise_vars(), total_power, cssm)?;
    let raw = duality::downlink_power_map(&dual, &eff, channels.noise_vars())?;
    Ok(duality::normalize_to_power(f_rf, &raw, total_power))
}
