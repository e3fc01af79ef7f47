//! SINR, sum-rate, effective channels, transmit power and energy efficiency
//! for an arbitrary `(F_RF, F_BB)` pair.
//!
//! Rates use log base 2 throughout (bits/s/Hz). The power model is stored in
//! milliwatts; energy efficiency converts the total to watts, so its unit is
//! bits/Hz/J.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::C64;

/// Device power consumptions in milliwatts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Baseband processor.
    pub p_bb_mw: f64,
    /// One RF chain.
    pub p_rf_mw: f64,
    /// One switch.
    pub p_sw_mw: f64,
    /// Per-phase-shifter power override; when `None`, the B-dependent default
    /// interpolates the 10 mW (B=1) / 20 mW (B=2) anchors linearly.
    pub p_ps_mw: Option<f64>,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_bb_mw: 200.0,
            p_rf_mw: 300.0,
            p_sw_mw: 5.0,
            p_ps_mw: None,
        }
    }
}

impl PowerModel {
    /// Per-phase-shifter power for a B-bit shifter.
    pub fn p_ps_mw(&self, bits: u32) -> f64 {
        self.p_ps_mw.unwrap_or(10.0 * bits as f64)
    }
}

/// Transmitter architecture, selecting the total-power formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    FullyDigital,
    FullyConnected,
    FixedSubarray,
    DynamicSubarray,
}

/// Per-user SINR on raw channel vectors.
///
/// `|h_k^H F_RF f_k|^2 / (sum_{j!=k} |h_k^H F_RF f_j|^2 + sigma_k^2)`.
pub fn sinr_from(
    channels: &[DVector<C64>],
    noise_vars: &[f64],
    f_rf: &DMatrix<C64>,
    f_bb: &DMatrix<C64>,
    k: usize,
) -> f64 {
    let eff = f_rf.adjoint() * &channels[k];
    let mut signal = 0.0;
    let mut interference = 0.0;
    for j in 0..f_bb.ncols() {
        let g = eff.dotc(&f_bb.column(j)).norm_sqr();
        if j == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    signal / (interference + noise_vars[k])
}

pub fn sinr(channels: &ChannelSet, f_rf: &DMatrix<C64>, f_bb: &DMatrix<C64>, k: usize) -> f64 {
    sinr_from(channels.channels(), channels.noise_vars(), f_rf, f_bb, k)
}

/// Sum-rate `sum_k log2(1 + SINR_k)` in bits/s/Hz.
pub fn sum_rate_from(
    channels: &[DVector<C64>],
    noise_vars: &[f64],
    f_rf: &DMatrix<C64>,
    f_bb: &DMatrix<C64>,
) -> f64 {
    (0..f_bb.ncols())
        .map(|k| (1.0 + sinr_from(channels, noise_vars, f_rf, f_bb, k)).log2())
        .sum()
}

pub fn sum_rate(channels: &ChannelSet, f_rf: &DMatrix<C64>, f_bb: &DMatrix<C64>) -> f64 {
    sum_rate_from(channels.channels(), channels.noise_vars(), f_rf, f_bb)
}

/// Effective baseband channels: vector `h~_k = F_RF^H h_k`, so that
/// `h~_k^H = h_k^H F_RF`.
pub fn effective_channels(channels: &ChannelSet, f_rf: &DMatrix<C64>) -> Vec<DVector<C64>> {
    channels
        .channels()
        .iter()
        .map(|h| f_rf.adjoint() * h)
        .collect()
}

/// Squared Frobenius norm of `F_RF F_BB`.
pub fn transmit_power(f_rf: &DMatrix<C64>, f_bb: &DMatrix<C64>) -> f64 {
    (f_rf * f_bb).norm_squared()
}

/// Total consumed power in milliwatts for the given architecture.
pub fn total_power_mw(
    arch: Architecture,
    model: &PowerModel,
    transmit_mw: f64,
    nt: usize,
    n_rf: usize,
    bits: u32,
) -> f64 {
    let nt = nt as f64;
    let n_rf = n_rf as f64;
    let p_ps = model.p_ps_mw(bits);
    match arch {
        Architecture::FullyDigital => transmit_mw + model.p_bb_mw + nt * model.p_rf_mw,
        Architecture::FullyConnected => {
            transmit_mw + model.p_bb_mw + n_rf * model.p_rf_mw + nt * n_rf * p_ps
        }
        Architecture::FixedSubarray => {
            transmit_mw + model.p_bb_mw + n_rf * model.p_rf_mw + nt * p_ps
        }
        Architecture::DynamicSubarray => {
            transmit_mw
                + model.p_bb_mw
                + n_rf * model.p_rf_mw
                + nt * p_ps
                + nt * model.p_sw_mw
        }
    }
}

/// Energy efficiency `eta = R / P_tot` in bits/Hz/J. `transmit_w` is the
/// radiated power in watts.
pub fn energy_efficiency(
    rate: f64,
    arch: Architecture,
    model: &PowerModel,
    transmit_w: f64,
    nt: usize,
    n_rf: usize,
    bits: u32,
) -> f64 {
    let p_tot_w = total_power_mw(arch, model, transmit_w * 1000.0, nt, n_rf, bits) / 1000.0;
    rate / p_tot_w
}
