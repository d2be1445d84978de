//! OFDM ISAC-SAR simulation laboratory.
//!
//! The crate generates CP-OFDM baseband waveforms (optionally built from a
//! 5G NR SSB resource grid), synthesizes multipath radar echoes along a
//! straight UAV track, estimates per-pulse delay/Doppler/gain of the
//! propagation paths with a two-stage OMP then SAGE scheme, picks the
//! near-direct path and forms SAR images with ZF range compression and
//! azimuth matched filtering.
//!
//! Module map:
//!
//! - [`waveform`]: OFDM symbol generation and delayed/Doppler-shifted replicas.
//! - [`ssb`]: SSB resource grid layout (PSS/SSS/PBCH/DMRS).
//! - [`scene`]: platform geometry, multipath channel generator, echo rendering.
//! - [`omp`]: delay-Doppler dictionary and orthogonal matching pursuit.
//! - [`sage`]: SAGE refinement and direct-path selection.
//! - [`imaging`]: range/azimuth compression and image metrics.
//! - [`harness`]: scenarios, Monte-Carlo sweeps and result tables.
//! - [`iq`]: binary I/Q dump format shared by waveforms, echo cubes and images.

pub mod error;
pub mod harness;
pub mod imaging;
pub mod iq;
pub mod omp;
pub mod sage;
pub mod scene;
pub mod ssb;
pub mod waveform;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
