//! Configured Monte-Carlo experiment runner and result emission.
//!
//! Trials are independent work items; every scheme within one trial consumes
//! the same channel realization, and per-trial seeds derive from the master
//! seed and the trial index, so results are identical regardless of the
//! worker count. Wall-clock columns are the only nondeterministic output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines;
use crate::channel::{ArrayGeometry, ChannelSet, TrialRecord};
use crate::codebook::PhaseCodebook;
use crate::design::{DesignError, DesignResult, TraceRecord};
use crate::duality::CssmOpts;
use crate::fp::{self, FpOpts};
use crate::heuristic::{self, HeuristicOpts};
use crate::metrics::{self, Architecture, PowerModel};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error("failed to write results: {0}")]
    Output(#[from] std::io::Error),
    #[error("failed to serialize results: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Fp,
    Heuristic,
    FixedSubarray,
    FullyDigital,
}

impl Scheme {
    pub fn architecture(self) -> Architecture {
        match self {
            Scheme::Fp | Scheme::Heuristic => Architecture::DynamicSubarray,
            Scheme::FixedSubarray => Architecture::FixedSubarray,
            Scheme::FullyDigital => Architecture::FullyDigital,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Fp => "fp",
            Scheme::Heuristic => "heuristic",
            Scheme::FixedSubarray => "fixed_subarray",
            Scheme::FullyDigital => "fully_digital",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Snr,
    Nt,
    Users,
    Bits,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepVariable::Snr => "snr",
            SweepVariable::Nt => "nt",
            SweepVariable::Users => "users",
            SweepVariable::Bits => "bits",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub nx: usize,
    pub ny: usize,
    /// Element spacing over wavelength; half-wavelength when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

/// Optional overrides for the circuit power model; omitted fields keep the
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PowerOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_bb_mw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_rf_mw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_sw_mw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_ps_mw: Option<f64>,
}

impl PowerOverrides {
    fn resolve(&self) -> PowerModel {
        let base = PowerModel::default();
        PowerModel {
            p_bb_mw: self.p_bb_mw.unwrap_or(base.p_bb_mw),
            p_rf_mw: self.p_rf_mw.unwrap_or(base.p_rf_mw),
            p_sw_mw: self.p_sw_mw.unwrap_or(base.p_sw_mw),
            p_ps_mw: self.p_ps_mw,
        }
    }
}

fn default_num_paths() -> usize {
    5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub n_rf: usize,
    pub users: usize,
    pub bits: u32,
    /// SNR in dB; noise variance is fixed at 1, so the transmit power budget
    /// is `10^(snr_db/10)`.
    pub snr_db: f64,
    pub num_trials: u64,
    pub master_seed: u64,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_num_paths")]
    pub num_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_model: Option<PowerOverrides>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errors = Vec::new();
        if self.geometry.nx == 0 || self.geometry.ny == 0 {
            errors.push("geometry: nx and ny must be at least 1".to_string());
        }
        if let Some(s) = self.geometry.spacing {
            if !(s > 0.0) {
                errors.push(format!("geometry.spacing: must be positive (got {s})"));
            }
        }
        if self.users == 0 {
            errors.push("users: need at least one user".to_string());
        }
        if self.n_rf < self.users {
            errors.push(format!(
                "n_rf: must be at least the user count (n_rf={} < users={})",
                self.n_rf, self.users
            ));
        }
        if self.n_rf > self.geometry.nx * self.geometry.ny {
            errors.push(format!(
                "n_rf: cannot exceed the antenna count ({} > {})",
                self.n_rf,
                self.geometry.nx * self.geometry.ny
            ));
        }
        if self.bits == 0 || self.bits > 16 {
            errors.push(format!("bits: must be in 1..=16 (got {})", self.bits));
        }
        if self.num_trials == 0 {
            errors.push("num_trials: must be at least 1".to_string());
        }
        if self.num_paths == 0 {
            errors.push("num_paths: must be at least 1".to_string());
        }
        if self.schemes.is_empty() {
            errors.push("schemes: need at least one scheme".to_string());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                errors.push("sweep.grid: must be non-empty".to_string());
            }
            match sweep.variable {
                SweepVariable::Snr => {}
                SweepVariable::Nt => {
                    for &v in &sweep.grid {
                        if v < 1.0 || v.fract() != 0.0 {
                            errors.push(format!(
                                "sweep.grid: nt values must be positive integers (got {v})"
                            ));
                        }
                    }
                }
                SweepVariable::Users | SweepVariable::Bits => {
                    for &v in &sweep.grid {
                        if v < 1.0 || v.fract() != 0.0 {
                            errors.push(format!(
                                "sweep.grid: values must be positive integers (got {v})"
                            ));
                        }
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(errors))
        }
    }
}

/// One resolved sweep point: the scenario actually simulated.
#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    value: f64,
    nx: usize,
    ny: usize,
    users: usize,
    n_rf: usize,
    bits: u32,
    snr_db: f64,
}

/// Largest divisor of `nt` not exceeding its square root, so swept antenna
/// counts map to the squarest available planar grid.
fn squarest_factor(nt: usize) -> usize {
    let mut best = 1;
    let mut d = 1;
    while d * d <= nt {
        if nt % d == 0 {
            best = d;
        }
        d += 1;
    }
    best
}

fn sweep_points(config: &ExperimentConfig) -> Vec<SweepPoint> {
    let base = SweepPoint {
        value: config.snr_db,
        nx: config.geometry.nx,
        ny: config.geometry.ny,
        users: config.users,
        n_rf: config.n_rf,
        bits: config.bits,
        snr_db: config.snr_db,
    };
    let Some(sweep) = &config.sweep else {
        return vec![base];
    };
    sweep
        .grid
        .iter()
        .map(|&v| {
            let mut p = base;
            p.value = v;
            match sweep.variable {
                SweepVariable::Snr => p.snr_db = v,
                SweepVariable::Nt => {
                    let nt = v as usize;
                    let ny = squarest_factor(nt);
                    p.ny = ny;
                    p.nx = nt / ny;
                }
                SweepVariable::Users => {
                    // K tracks the sweep; the chain count follows so that
                    // n_rf >= K always holds.
                    p.users = v as usize;
                    p.n_rf = config.n_rf.max(v as usize);
                }
                SweepVariable::Bits => p.bits = v as u32,
            }
            p
        })
        .collect()
}

/// Aggregated results for one (sweep point, scheme) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub mean_sum_rate: f64,
    /// Standard error of the per-trial sum rates.
    pub std_error: f64,
    pub mean_energy_efficiency: f64,
    pub mean_iterations: f64,
    pub mean_wall_clock_ms: f64,
}

/// Per-trial, per-scheme diagnostic trace, emitted when tracing is enabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceDump {
    pub sweep_value: f64,
    pub trial: u64,
    pub scheme: Scheme,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub collect_traces: bool,
    pub dump_channels: bool,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceDump>,
    pub channel_dumps: Vec<TrialRecord>,
}

struct TrialOutcome {
    per_scheme: Vec<(Scheme, f64, f64, f64, f64)>,
    traces: Vec<TraceDump>,
    dump: Option<TrialRecord>,
}

fn run_scheme(
    scheme: Scheme,
    channels: &ChannelSet,
    power: f64,
    codebook: &PhaseCodebook,
    n_rf: usize,
) -> Result<DesignResult, DesignError> {
    match scheme {
        Scheme::Fp => fp::fp_design(channels, power, codebook, n_rf, &FpOpts::default()),
        Scheme::Heuristic => {
            heuristic::heuristic_design(channels, power, codebook, n_rf, &HeuristicOpts::default())
        }
        Scheme::FixedSubarray => baselines::fixed_subarray_design(
            channels,
            power,
            codebook,
            n_rf,
            &HeuristicOpts::default(),
        ),
        Scheme::FullyDigital => {
            baselines::fully_digital_design(channels, power, &CssmOpts::default())
        }
    }
}

/// Run the full experiment, optionally collecting traces and channel dumps.
pub fn run_full(
    config: &ExperimentConfig,
    options: RunOptions,
) -> Result<RunArtifacts, HarnessError> {
    config.validate()?;
    let power_model = config
        .power_model
        .clone()
        .unwrap_or_default()
        .resolve();
    let sweep_name = config
        .sweep
        .as_ref()
        .map(|s| s.variable.to_string())
        .unwrap_or_else(|| SweepVariable::Snr.to_string());

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut dumps = Vec::new();

    for (point_idx, point) in sweep_points(config).iter().enumerate() {
        let geometry = match config.geometry.spacing {
            Some(s) => ArrayGeometry::with_spacing(point.nx, point.ny, s)?,
            None => ArrayGeometry::new(point.nx, point.ny)?,
        };
        let nt = geometry.nt();
        let codebook = PhaseCodebook::new(point.bits, nt)
            .map_err(DesignError::Codebook)?;
        let power = 10f64.powf(point.snr_db / 10.0);

        let outcomes: Vec<Result<TrialOutcome, HarnessError>> = (0..config.num_trials)
            .into_par_iter()
            .map(|trial| {
                // Distinct trial ids per sweep point keep points statistically
                // independent while staying reproducible.
                let trial_id = ((point_idx as u64) << 32) | trial;
                let channels = ChannelSet::generate(
                    geometry,
                    point.users,
                    config.num_paths,
                    1.0,
                    config.master_seed,
                    trial_id,
                )?;
                let mut per_scheme = Vec::with_capacity(config.schemes.len());
                let mut trial_traces = Vec::new();
                for &scheme in &config.schemes {
                    let start = Instant::now();
                    let result = run_scheme(scheme, &channels, power, &codebook, point.n_rf)?;
                    let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
                    let ee = metrics::energy_efficiency(
                        result.sum_rate,
                        scheme.architecture(),
                        &power_model,
                        power,
                        nt,
                        point.n_rf,
                        point.bits,
                    );
                    per_scheme.push((
                        scheme,
                        result.sum_rate,
                        ee,
                        result.iterations as f64,
                        elapsed_ms,
                    ));
                    if options.collect_traces {
                        trial_traces.push(TraceDump {
                            sweep_value: point.value,
                            trial,
                            scheme,
                            records: result.trace,
                        });
                    }
                }
                let dump = options.dump_channels.then(|| TrialRecord {
                    trial: trial_id,
                    master_seed: config.master_seed,
                    geometry,
                    noise_vars: channels.noise_vars().to_vec(),
                    paths: (0..channels.num_users())
                        .map(|k| channels.paths(k).to_vec())
                        .collect(),
                });
                Ok(TrialOutcome {
                    per_scheme,
                    traces: trial_traces,
                    dump,
                })
            })
            .collect();

        let mut rates: Vec<Vec<f64>> = vec![Vec::new(); config.schemes.len()];
        let mut ees: Vec<Vec<f64>> = vec![Vec::new(); config.schemes.len()];
        let mut iters: Vec<Vec<f64>> = vec![Vec::new(); config.schemes.len()];
        let mut clocks: Vec<Vec<f64>> = vec![Vec::new(); config.schemes.len()];
        for outcome in outcomes {
            let outcome = outcome?;
            for (s, (_, rate, ee, it, ms)) in outcome.per_scheme.iter().enumerate() {
                rates[s].push(*rate);
                ees[s].push(*ee);
                iters[s].push(*it);
                clocks[s].push(*ms);
            }
            traces.extend(outcome.traces);
            if let Some(d) = outcome.dump {
                dumps.push(d);
            }
        }

        for (s, &scheme) in config.schemes.iter().enumerate() {
            let n = rates[s].len() as f64;
            let mean = rates[s].iter().sum::<f64>() / n;
            let std_error = if rates[s].len() > 1 {
                let var =
                    rates[s].iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            rows.push(ResultRow {
                sweep_variable: sweep_name.clone(),
                sweep_value: point.value,
                scheme,
                mean_sum_rate: mean,
                std_error,
                mean_energy_efficiency: ees[s].iter().sum::<f64>() / n,
                mean_iterations: iters[s].iter().sum::<f64>() / n,
                mean_wall_clock_ms: clocks[s].iter().sum::<f64>() / n,
            });
        }
    }

    Ok(RunArtifacts {
        rows,
        traces,
        channel_dumps: dumps,
    })
}

/// Run the experiment and return the aggregated rows only.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    Ok(run_full(config, RunOptions::default())?.rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: &'static str,
    master_seed: u64,
    config: &'a ExperimentConfig,
}

/// Write aggregated rows with a metadata header.
///
/// CSV output starts with `#`-prefixed metadata lines followed by a header
/// row and one line per `ResultRow` in a fixed column order. JSON-lines
/// output starts with a metadata record. Everything except the wall-clock
/// column is byte-reproducible for a fixed config.
pub fn emit_results(
    rows: &[ResultRow],
    config: &ExperimentConfig,
    path: &Path,
    format: OutputFormat,
) -> Result<(), HarnessError> {
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        master_seed: config.master_seed,
        config,
    };
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    match format {
        OutputFormat::Csv => {
            writeln!(out, "# version: {}", meta.version)?;
            writeln!(out, "# master_seed: {}", meta.master_seed)?;
            writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
            writeln!(
                out,
                "sweep_variable,sweep_value,scheme,mean_sum_rate,std_error,mean_energy_efficiency,mean_iterations,mean_wall_clock_ms"
            )?;
            for row in rows {
                writeln!(
                    out,
                    "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
                    row.sweep_variable,
                    row.sweep_value,
                    row.scheme,
                    row.mean_sum_rate,
                    row.std_error,
                    row.mean_energy_efficiency,
                    row.mean_iterations,
                    row.mean_wall_clock_ms,
                )?;
            }
        }
        OutputFormat::Jsonl => {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&serde_json::json!({ "metadata": meta }))?
            )?;
            for row in rows {
                writeln!(out, "{}", serde_json::to_string(row)?)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Write one JSON line per record to `path`.
pub fn emit_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()?;
    Ok(())
}
