//! Clustered multipath mmWave MISO channels over a uniform planar array.
//!
//! Each user channel is a sum of `L` propagation paths,
//! `h = sqrt(Nt/L) * sum_l alpha_l * a(phi_l, theta_l)`, with complex standard
//! normal path gains and angles drawn uniformly from configurable ranges.
//! Generation is pure given a seed: per-trial, per-user sub-stream seeds are
//! derived from the master seed by a fixed counter-mixing scheme, so trials
//! are reproducible independently of execution order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("antenna counts must be at least 1 (got {nx}x{ny})")]
    EmptyArray { nx: usize, ny: usize },
    #[error("antenna spacing ratio must be positive (got {0})")]
    BadSpacing(f64),
    #[error("path count must be at least 1")]
    NoPaths,
    #[error("noise variance must be positive (got {0})")]
    BadNoise(f64),
    #[error("need at least one user")]
    NoUsers,
}

/// Uniform planar array geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Antenna count in the horizontal direction.
    pub nx: usize,
    /// Antenna count in the vertical direction.
    pub ny: usize,
    /// Inter-antenna spacing over wavelength, `d / lambda`.
    pub spacing_over_wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(nx: usize, ny: usize) -> Result<Self, ChannelError> {
        Self::with_spacing(nx, ny, 0.5)
    }

    pub fn with_spacing(nx: usize, ny: usize, spacing: f64) -> Result<Self, ChannelError> {
        if nx == 0 || ny == 0 {
            return Err(ChannelError::EmptyArray { nx, ny });
        }
        if !(spacing > 0.0) {
            return Err(ChannelError::BadSpacing(spacing));
        }
        Ok(Self {
            nx,
            ny,
            spacing_over_wavelength: spacing,
        })
    }

    pub fn nt(&self) -> usize {
        self.nx * self.ny
    }
}

/// One propagation path: complex gain plus departure angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: C64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Angle ranges for the path sampler. Defaults match the usual simulation
/// setup: azimuth uniform on [-pi/2, pi/2], elevation on [-pi/4, pi/4].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRanges {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
}

impl Default for AngleRanges {
    fn default() -> Self {
        Self {
            azimuth: (-FRAC_PI_2, FRAC_PI_2),
            elevation: (-FRAC_PI_4, FRAC_PI_4),
        }
    }
}

/// Transmit steering vector `a_x(phi,theta) (x) a_y(theta)` with unit norm.
///
/// Antenna indexing is fixed: the horizontal index varies slowest, i.e.
/// element `ix*Ny + iy` carries `a_x[ix] * a_y[iy]`.
pub fn steering_vector(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> DVector<C64> {
    let step = TAU * geometry.spacing_over_wavelength;
    let phase_y = step * elevation.cos();
    let phase_x = step * elevation.sin() * azimuth.sin();
    let scale = 1.0 / (geometry.nt() as f64).sqrt();
    DVector::from_fn(geometry.nt(), |i, _| {
        let ix = (i / geometry.ny) as f64;
        let iy = (i % geometry.ny) as f64;
        C64::from_polar(scale, ix * phase_x + iy * phase_y)
    })
}

/// Mix a (trial, user) counter pair into the master seed.
///
/// SplitMix64 finalizer applied to each counter in a fixed chain; this is the
/// documented sub-stream scheme used by the harness.
pub fn sub_seed(master_seed: u64, trial: u64, user: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(master_seed ^ mix(trial.wrapping_add(1))) ^ mix(user.wrapping_add(0x5851_F42D)))
}

/// Draw path parameters and assemble the channel vector.
///
/// Per path the draw order is fixed (gain re, gain im, azimuth, elevation) so
/// a seed fully determines the result. The returned channel is bit-for-bit
/// reproducible from the returned paths via [`channel_from_paths`].
pub fn generate_channel(
    geometry: &ArrayGeometry,
    num_paths: usize,
    seed: u64,
) -> Result<(DVector<C64>, Vec<PathParams>), ChannelError> {
    generate_channel_in(geometry, num_paths, &AngleRanges::default(), seed)
}

pub fn generate_channel_in(
    geometry: &ArrayGeometry,
    num_paths: usize,
    ranges: &AngleRanges,
    seed: u64,
) -> Result<(DVector<C64>, Vec<PathParams>), ChannelError> {
    if num_paths == 0 {
        return Err(ChannelError::NoPaths);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // CN(0,1): independent real/imag parts with variance 1/2.
    let part = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let paths: Vec<PathParams> = (0..num_paths)
        .map(|_| {
            let re = part.sample(&mut rng);
            let im = part.sample(&mut rng);
            let azimuth = rng.gen_range(ranges.azimuth.0..=ranges.azimuth.1);
            let elevation = rng.gen_range(ranges.elevation.0..=ranges.elevation.1);
            PathParams {
                gain: C64::new(re, im),
                azimuth,
                elevation,
            }
        })
        .collect();
    Ok((channel_from_paths(geometry, &paths), paths))
}

/// Rebuild `h = sqrt(Nt/L) * sum_l alpha_l a(phi_l, theta_l)` from stored
/// path parameters. Summation order is fixed by the path list.
pub fn channel_from_paths(geometry: &ArrayGeometry, paths: &[PathParams]) -> DVector<C64> {
    let mut h = DVector::zeros(geometry.nt());
    for p in paths {
        h += steering_vector(geometry, p.azimuth, p.elevation) * p.gain;
    }
    h * C64::new((geometry.nt() as f64 / paths.len() as f64).sqrt(), 0.0)
}

/// The K downlink channels of one Monte-Carlo trial plus their noise
/// variances and the path parameters they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channels: Vec<DVector<C64>>,
    noise_vars: Vec<f64>,
    geometry: ArrayGeometry,
    paths: Vec<Vec<PathParams>>,
}

impl ChannelSet {
    pub fn from_parts(
        geometry: ArrayGeometry,
        paths: Vec<Vec<PathParams>>,
        noise_vars: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        if paths.is_empty() {
            return Err(ChannelError::NoUsers);
        }
        for user in &paths {
            if user.is_empty() {
                return Err(ChannelError::NoPaths);
            }
        }
        for &v in &noise_vars {
            if !(v > 0.0) {
                return Err(ChannelError::BadNoise(v));
            }
        }
        assert_eq!(paths.len(), noise_vars.len());
        let channels = paths
            .iter()
            .map(|p| channel_from_paths(&geometry, p))
            .collect();
        Ok(Self {
            channels,
            noise_vars,
            geometry,
            paths,
        })
    }

    /// Generate all users of one trial with the documented sub-seed scheme.
    pub fn generate(
        geometry: ArrayGeometry,
        num_users: usize,
        num_paths: usize,
        noise_var: f64,
        master_seed: u64,
        trial: u64,
    ) -> Result<Self, ChannelError> {
        if num_users == 0 {
            return Err(ChannelError::NoUsers);
        }
        let mut paths = Vec::with_capacity(num_users);
        for user in 0..num_users {
            let seed = sub_seed(master_seed, trial, user as u64);
            let (_, p) = generate_channel(&geometry, num_paths, seed)?;
            paths.push(p);
        }
        Self::from_parts(geometry, paths, vec![noise_var; num_users])
    }

    /// Wrap explicit channel vectors (for synthetic or replayed scenarios).
    /// No path parameters are stored, so `regenerate` is unavailable.
    pub fn from_channels(
        geometry: ArrayGeometry,
        channels: Vec<DVector<C64>>,
        noise_vars: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        if channels.is_empty() {
            return Err(ChannelError::NoUsers);
        }
        for &v in &noise_vars {
            if !(v > 0.0) {
                return Err(ChannelError::BadNoise(v));
            }
        }
        assert_eq!(channels.len(), noise_vars.len());
        let paths = vec![Vec::new(); channels.len()];
        Ok(Self {
            channels,
            noise_vars,
            geometry,
            paths,
        })
    }

    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    pub fn nt(&self) -> usize {
        self.geometry.nt()
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn channel(&self, k: usize) -> &DVector<C64> {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[DVector<C64>] {
        &self.channels
    }

    pub fn noise_var(&self, k: usize) -> f64 {
        self.noise_vars[k]
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    pub fn paths(&self, k: usize) -> &[PathParams] {
        &self.paths[k]
    }

    /// Recompute user `k` from its stored paths; equals `channel(k)`
    /// bit-for-bit.
    pub fn regenerate(&self, k: usize) -> DVector<C64> {
        channel_from_paths(&self.geometry, &self.paths[k])
    }
}

/// One replayable trial record for the optional channel-dump file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub master_seed: u64,
    pub geometry: ArrayGeometry,
    pub noise_vars: Vec<f64>,
    pub paths: Vec<Vec<PathParams>>,
}
