//! Reference schemes for the comparison curves: fully-digital beamforming
//! and the fixed-subarray restriction of the heuristic designer.

use nalgebra::DMatrix;

use crate::channel::ChannelSet;
use crate::codebook::PhaseCodebook;
use crate::design::{DesignError, DesignResult, TraceRecord};
use crate::duality::{self, CssmOpts};
use crate::heuristic::{self, HeuristicOpts};
use crate::metrics;

/// Fully-digital design: the duality machinery applied to the raw channels
/// with an identity analog stage.
pub fn fully_digital_design(
    channels: &ChannelSet,
    total_power: f64,
    opts: &CssmOpts,
) -> Result<DesignResult, DesignError> {
    let nt = channels.nt();
    let f_rf = DMatrix::identity(nt, nt);
    let dual = duality::cssm_solve(channels.channels(), channels.noise_vars(), total_power, opts)?;
    let raw = duality::downlink_power_map(&dual, channels.channels(), channels.noise_vars())?;
    let f_bb = duality::normalize_to_power(&f_rf, &raw, total_power);
    let sum_rate = metrics::sum_rate(channels, &f_rf, &f_bb);
    let trace = vec![TraceRecord {
        iteration: 0,
        sum_rate,
        f_q: None,
        delta: None,
        mu: None,
        changed_rows: None,
    }];
    Ok(DesignResult {
        f_rf,
        analog: None,
        f_bb,
        sum_rate,
        iterations: dual.iterations,
        converged: dual.converged,
        trace,
    })
}

/// Fixed-subarray baseline: the heuristic designer with every antenna's RF
/// chain frozen to the contiguous partition; only phases are searched.
pub fn fixed_subarray_design(
    channels: &ChannelSet,
    total_power: f64,
    codebook: &PhaseCodebook,
    n_rf: usize,
    opts: &HeuristicOpts,
) -> Result<DesignResult, DesignError> {
    heuristic::design_impl(channels, total_power, codebook, n_rf, opts, true)
}
