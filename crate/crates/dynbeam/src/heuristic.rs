//! Heuristic hybrid beamformer design.
//!
//! Alternates two stages: a row-wise exhaustive analog search that maximizes
//! the sum rate directly with the digital beamformer held fixed, and a
//! duality-based digital stage on the effective channel of the updated
//! analog stage. The analog stage is a conditional argmax per antenna, so
//! the rate never decreases within a sweep; the digital stage keeps
//! whichever of the fresh duality solve or the renormalized incumbent rates
//! higher, which makes the best-iterate trace non-decreasing by
//! construction.

use nalgebra::DMatrix;

use crate::channel::ChannelSet;
use crate::codebook::{AnalogBeamformer, PhaseCodebook};
use crate::design::{self, DesignError, DesignResult, TraceRecord};
use crate::duality::{self, CssmOpts};
use crate::metrics;
use crate::rowscan::{rate_objective, RowScan};
use crate::C64;

#[derive(Debug, Clone, Copy)]
pub struct HeuristicOpts {
    /// Relative best-rate tolerance for the outer loop.
    pub outer_tol: f64,
    pub outer_max_iters: usize,
    pub cssm: CssmOpts,
}

impl Default for HeuristicOpts {
    fn default() -> Self {
        Self {
            outer_tol: 1e-4,
            outer_max_iters: 20,
            cssm: CssmOpts::default(),
        }
    }
}

/// Best (RF chain, phase) pair for one antenna with every other row and the
/// digital beamformer fixed, maximizing the sum rate. Ties keep the current
/// assignment when it is among the maximizers, otherwise they resolve to the
/// lowest phase index, then the lowest RF index.
pub fn best_row_assignment(
    channels: &ChannelSet,
    analog: &AnalogBeamformer,
    f_bb: &DMatrix<C64>,
    row: usize,
) -> (usize, usize) {
    let obj = rate_objective(channels.noise_vars());
    let mut scan = RowScan::new(channels.channels(), f_bb, analog.clone());
    scan.improve_row(row, &obj, false);
    scan.analog().assignment()[row]
}

/// One ascending pass over all antennas, applying `best_row_assignment`
/// sequentially. The sum rate with the given `f_bb` is non-decreasing across
/// every row update.
pub fn analog_sweep(
    channels: &ChannelSet,
    analog: &AnalogBeamformer,
    f_bb: &DMatrix<C64>,
) -> AnalogBeamformer {
    let obj = rate_objective(channels.noise_vars());
    let mut scan = RowScan::new(channels.channels(), f_bb, analog.clone());
    scan.sweep(&obj, false);
    scan.into_analog()
}

/// Shared loop for the dynamic heuristic and the fixed-subarray baseline.
/// With `frozen_partition` set, each antenna's RF chain is pinned and only
/// phases are searched.
pub(crate) fn design_impl(
    channels: &ChannelSet,
    total_power: f64,
    codebook: &PhaseCodebook,
    n_rf: usize,
    opts: &HeuristicOpts,
    frozen_partition: bool,
) -> Result<DesignResult, DesignError> {
    let mut analog = design::initial_analog(channels, n_rf, codebook)?;
    let mut f_rf = analog.materialize();
    let mut f_bb = design::initial_digital(channels, &f_rf, total_power, &opts.cssm)?;
    let rate = metrics::sum_rate(channels, &f_rf, &f_bb);

    let mut trace = vec![TraceRecord {
        iteration: 0,
        sum_rate: rate,
        f_q: None,
        delta: None,
        mu: None,
        changed_rows: None,
    }];
    let mut best = (analog.clone(), f_bb.clone(), rate);
    let mut prev_best = rate;
    let mut converged = false;
    let mut iterations = 0;

    let obj = rate_objective(channels.noise_vars());
    for n in 1..=opts.outer_max_iters {
        let mut scan = RowScan::new(channels.channels(), &f_bb, analog);
        let changed = scan.sweep(&obj, frozen_partition);
        analog = scan.into_analog();
        f_rf = analog.materialize();

        // Digital stage: fresh duality solve versus the renormalized
        // incumbent; keep whichever rates higher (the duality solve targets
        // the dual objective, not a guaranteed downlink improvement).
        let fresh = design::initial_digital(channels, &f_rf, total_power, &opts.cssm)?;
        let incumbent = duality::normalize_to_power(&f_rf, &f_bb, total_power);
        let rate_fresh = metrics::sum_rate(channels, &f_rf, &fresh);
        let rate_incumbent = metrics::sum_rate(channels, &f_rf, &incumbent);
        let rate_now = if rate_fresh >= rate_incumbent {
            f_bb = fresh;
            rate_fresh
        } else {
            f_bb = incumbent;
            rate_incumbent
        };

        if rate_now > best.2 {
            best = (analog.clone(), f_bb.clone(), rate_now);
        }
        trace.push(TraceRecord {
            iteration: n,
            sum_rate: best.2,
            f_q: None,
            delta: None,
            mu: None,
            changed_rows: Some(changed),
        });
        iterations = n;
        if (best.2 - prev_best).abs() < opts.outer_tol * prev_best.abs().max(1.0) {
            converged = true;
            break;
        }
        prev_best = best.2;
    }

    let (analog, f_bb, sum_rate) = best;
    Ok(DesignResult {
        f_rf: analog.materialize(),
        analog: Some(analog),
        f_bb,
        sum_rate,
        iterations,
        converged,
        trace,
    })
}

/// Full heuristic design with dynamic subarrays.
pub fn heuristic_design(
    channels: &ChannelSet,
    total_power: f64,
    codebook: &PhaseCodebook,
    n_rf: usize,
    opts: &HeuristicOpts,
) -> Result<DesignResult, DesignError> {
    design_impl(channels, total_power, codebook, n_rf, opts, false)
}
