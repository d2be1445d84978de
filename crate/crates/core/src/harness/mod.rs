//! Experiment orchestration: scenario files, per-pulse estimation, Monte-Carlo
//! sweeps and result tables.

mod pipeline;
mod run;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imaging::{Compression, RangeGate};
use crate::omp::StoppingRule;
use crate::scene::{AntennaPattern, ChannelProfile, GroundTarget, PhaseConvention, PlatformTrajectory};
use crate::ssb::build_ssb;
use crate::waveform::{ModulationSymbols, OfdmConfig};
use crate::{Error, Result};

pub use pipeline::{cleaned_cube, estimate_cube, CubeEstimate, Estimator, PulseResult};
pub use run::{
    aggregate, read_records_csv, run_cell, run_scenario, sweep_and_aggregate, write_manifest, write_records_csv,
    write_summary_csv, Prepared, Rendered, RunRecord, SummaryRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Image the echo cube as received.
    Raw,
    /// SAGE seeded from the strongest correlation-spectrum peaks; images the
    /// strongest refined path.
    SageOnly,
    /// OMP support, then SAGE, then direct-path selection.
    OmpSage,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Raw, Method::SageOnly, Method::OmpSage];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::SageOnly => "sage_only",
            Method::OmpSage => "omp_sage",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method '{s}' (raw, sage_only, omp_sage)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSpec {
    pub carrier_freq: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub cp_samples: usize,
    #[serde(default = "one")]
    pub oversampling: usize,
    /// Central subcarriers carrying QPSK; defaults to all.
    #[serde(default)]
    pub occupied: Option<usize>,
    #[serde(default)]
    pub symbol_seed: u64,
    /// Use one SSB symbol (0..4) of this cell ID instead of random QPSK.
    #[serde(default)]
    pub ssb: Option<SsbSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsbSource {
    pub pci: u16,
    pub symbol: usize,
}

fn one() -> usize {
    1
}

impl WaveformSpec {
    pub fn config(&self) -> Result<OfdmConfig> {
        OfdmConfig::new(
            self.carrier_freq,
            self.subcarriers,
            self.subcarrier_spacing,
            self.cp_samples,
            self.oversampling,
        )
    }

    pub fn symbols(&self) -> Result<ModulationSymbols> {
        if let Some(src) = self.ssb {
            return build_ssb(src.pci, self.symbol_seed)?.to_symbols(src.symbol, self.subcarriers);
        }
        ModulationSymbols::qpsk_centered(self.subcarriers, self.occupied.unwrap_or(self.subcarriers), self.symbol_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSpec {
    pub altitude: f64,
    pub velocity: f64,
    pub prf: f64,
    pub num_pulses: usize,
    /// Along-track antenna length L_a, m.
    pub antenna_length: f64,
}

impl PlatformSpec {
    pub fn trajectory(&self) -> PlatformTrajectory {
        PlatformTrajectory {
            altitude: self.altitude,
            velocity: self.velocity,
            prf: self.prf,
            num_pulses: self.num_pulses,
        }
    }

    pub fn antenna(&self, cfg: &OfdmConfig) -> Result<AntennaPattern> {
        AntennaPattern::new(cfg.wavelength(), self.antenna_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    /// Q.
    #[serde(default = "default_dopplers")]
    pub doppler_bins: usize,
    /// Expected number of paths; OMP runs at most twice this many iterations
    /// and SAGE-only seeds this many cells.
    #[serde(default = "default_paths")]
    pub expected_paths: usize,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default = "default_factor")]
    pub refine_factor: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    /// Direct-path candidates satisfy `τ ≤ threshold_factor·τ_min`.
    #[serde(default = "default_threshold")]
    pub threshold_factor: f64,
    /// Refined paths whose matched-filter amplitude is below this many noise
    /// standard deviations are dropped before selection.
    #[serde(default = "default_prune")]
    pub prune_sigma: f64,
    /// Candidate atoms more than this many dB below the strongest one on the
    /// same pulse are treated as off-grid leakage and dropped.
    #[serde(default = "default_leakage")]
    pub leakage_db: f64,
}

fn default_dopplers() -> usize {
    5
}
fn default_paths() -> usize {
    4
}
fn default_factor() -> usize {
    16
}
fn default_tol() -> f64 {
    1e-3
}
fn default_sweeps() -> usize {
    20
}
fn default_threshold() -> f64 {
    1.2
}
fn default_prune() -> f64 {
    5.0
}
fn default_leakage() -> f64 {
    25.0
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            doppler_bins: default_dopplers(),
            expected_paths: default_paths(),
            stopping: StoppingRule::default(),
            refine_factor: default_factor(),
            tolerance: default_tol(),
            max_sweeps: default_sweeps(),
            threshold_factor: default_threshold(),
            prune_sigma: default_prune(),
            leakage_db: default_leakage(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingSpec {
    #[serde(default)]
    pub compression: Compression,
    #[serde(default)]
    pub gate: RangeGate,
    #[serde(default = "default_window_cells")]
    pub window_cells: f64,
    #[serde(default = "default_main_cells")]
    pub mainlobe_cells: f64,
}

fn default_window_cells() -> f64 {
    16.0
}
fn default_main_cells() -> f64 {
    1.0
}

impl Default for ImagingSpec {
    fn default() -> Self {
        Self {
            compression: Compression::default(),
            gate: RangeGate::default(),
            window_cells: default_window_cells(),
            mainlobe_cells: default_main_cells(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub snr_db: Vec<f64>,
    pub seeds: SeedSpec,
    pub waveform: WaveformSpec,
    pub platform: PlatformSpec,
    pub targets: Vec<GroundTarget>,
    pub channel: ChannelProfile,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub imaging: ImagingSpec,
    #[serde(default)]
    pub convention: PhaseConvention,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario = toml::from_str(&text).map_err(|e| Error::Scenario {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        sc.validate().map_err(|e| Error::Scenario {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("scenario id is empty".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr_db must be a non-empty list of finite values".into()));
        }
        if self.seeds.seeds().is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("scenario has no targets".into()));
        }
        let cfg = self.waveform.config()?;
        self.waveform.symbols()?;
        self.platform.trajectory().validate()?;
        self.platform.antenna(&cfg)?;
        if self.channel.num_paths == 0 {
            return Err(Error::Config("channel needs at least one path".into()));
        }
        if self.estimator.expected_paths == 0 || self.estimator.doppler_bins == 0 {
            return Err(Error::Config("estimator needs expected_paths >= 1 and doppler_bins >= 1".into()));
        }
        if !(self.estimator.leakage_db > 0.0) {
            return Err(Error::Config("leakage_db must be positive".into()));
        }
        if !(self.estimator.threshold_factor >= 1.0) {
            return Err(Error::Config("threshold_factor must be >= 1".into()));
        }
        Ok(())
    }
}
