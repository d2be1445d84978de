//! Platform geometry, parametric multipath channels and echo rendering.
//!
//! The UAV flies along y at constant altitude; slow time is centred so that
//! pulse `N_a/2` is at `η = 0`. Each ground target gets its own multipath
//! channel: a (possibly attenuated) near-direct path at the two-way geometric
//! delay plus reflections with exponentially distributed excess delay. The
//! excess delays and Doppler offsets are fixed per realization; the geometric
//! part of every path follows the target's range history.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::waveform::{OfdmConfig, ReplicaBank};
use crate::{Error, Result, C64, SPEED_OF_LIGHT};

/// Guard samples on each side of the fast-time window.
pub const WINDOW_GUARD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformTrajectory {
    /// Flight altitude h_p, m.
    pub altitude: f64,
    /// Ground speed v_p along y, m/s.
    pub velocity: f64,
    /// Pulse repetition frequency, Hz.
    pub prf: f64,
    /// Number of pulses N_a.
    pub num_pulses: usize,
}

impl PlatformTrajectory {
    /// Altitude 1 km, 40 m/s, 800 Hz PRF, 128 pulses.
    pub fn desk() -> Self {
        Self {
            altitude: 1000.0,
            velocity: 40.0,
            prf: 800.0,
            num_pulses: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.altitude > 0.0 && self.velocity > 0.0 && self.prf > 0.0) {
            return Err(Error::Config(format!(
                "trajectory needs positive altitude, velocity and prf: {self:?}"
            )));
        }
        if self.num_pulses == 0 {
            return Err(Error::Config("trajectory needs at least one pulse".into()));
        }
        Ok(())
    }

    /// Slow time of pulse `i`, `η_i = (i − ⌊N_a/2⌋)/prf`.
    pub fn slow_time(&self, i: usize) -> f64 {
        (i as f64 - (self.num_pulses / 2) as f64) / self.prf
    }

    /// Along-track platform position at pulse `i`.
    pub fn position(&self, i: usize) -> f64 {
        self.velocity * self.slow_time(i)
    }

    /// Along-track distance flown between pulses.
    pub fn azimuth_spacing(&self) -> f64 {
        self.velocity / self.prf
    }

    pub fn aperture_length(&self) -> f64 {
        self.azimuth_spacing() * self.num_pulses as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTarget {
    /// Cross-track ground distance, m.
    pub x: f64,
    /// Along-track position, m.
    pub y: f64,
    /// Complex reflectivity g_m.
    #[serde(default = "unit_rcs", with = "complex_pair")]
    pub rcs: C64,
}

fn unit_rcs() -> C64 {
    C64::new(1.0, 0.0)
}

mod complex_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::C64;

    pub fn serialize<S: Serializer>(v: &C64, s: S) -> Result<S::Ok, S::Error> {
        [v.re, v.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

impl GroundTarget {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, rcs: unit_rcs() }
    }

    /// Closest-approach slant range `R̄ = sqrt(x² + h_p²)`.
    pub fn closest_range(&self, traj: &PlatformTrajectory) -> f64 {
        self.x.hypot(traj.altitude)
    }
}

/// One multipath component: complex gain, delay and Doppler shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    #[serde(with = "complex_pair")]
    pub gain: C64,
    /// Delay, s.
    pub delay: f64,
    /// Doppler shift, Hz.
    pub doppler: f64,
}

impl PathParams {
    pub fn new(gain: C64, delay: f64, doppler: f64) -> Self {
        Self { gain, delay, doppler }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaPattern {
    /// Carrier wavelength λ, m.
    pub wavelength: f64,
    /// Effective along-track antenna length L_a, m.
    pub aperture: f64,
}

impl AntennaPattern {
    pub fn new(wavelength: f64, aperture: f64) -> Result<Self> {
        if !(aperture > 0.0 && wavelength > 0.0) {
            return Err(Error::Config(format!(
                "antenna needs positive wavelength and aperture, got {wavelength}, {aperture}"
            )));
        }
        Ok(Self { wavelength, aperture })
    }

    /// Azimuth beamwidth β_bw = 0.886·λ/L_a, rad.
    pub fn beamwidth(&self) -> f64 {
        0.886 * self.wavelength / self.aperture
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Instantaneous slant range `sqrt(R̄² + (v_p·η − y)²)`.
pub fn slant_range(traj: &PlatformTrajectory, tgt: &GroundTarget, eta: f64) -> f64 {
    tgt.closest_range(traj).hypot(traj.velocity * eta - tgt.y)
}

/// Two-way azimuth amplitude envelope `sinc²(0.886·θ/β_bw)`, `sinc(x) = sin(x)/x`.
pub fn azimuth_envelope(pat: &AntennaPattern, theta: f64) -> f64 {
    let s = sinc(0.886 * theta / pat.beamwidth());
    s * s
}

/// Off-broadside look angle from the platform at slow time `eta` to the target.
pub fn look_angle(traj: &PlatformTrajectory, tgt: &GroundTarget, eta: f64) -> f64 {
    let r = slant_range(traj, tgt, eta);
    ((tgt.y - traj.velocity * eta) / r).asin()
}

/// Doppler of a stationary scatterer, `−(2/λ)·dR/dη`.
pub fn geometric_doppler(traj: &PlatformTrajectory, tgt: &GroundTarget, eta: f64, wavelength: f64) -> f64 {
    let r = slant_range(traj, tgt, eta);
    -2.0 / wavelength * traj.velocity * (traj.velocity * eta - tgt.y) / r
}

/// Statistical shape of a target's multipath channel, independent of geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    /// Total number of paths L including the near-direct one.
    pub num_paths: usize,
    /// Extra loss on the near-direct path, dB.
    #[serde(default)]
    pub direct_attenuation_db: f64,
    /// Smallest excess delay of a reflection, s.
    #[serde(default)]
    pub min_excess_delay: f64,
    /// Mean of the exponential excess delay beyond the minimum, s.
    #[serde(default)]
    pub excess_delay_mean: f64,
    /// Excess delays are clipped here, s.
    #[serde(default)]
    pub max_excess_delay: f64,
    /// Mean power of the earliest reflection relative to an unattenuated
    /// direct path, dB.
    #[serde(default)]
    pub reflection_power_db: f64,
    /// Power drop per later reflection, dB.
    #[serde(default)]
    pub gain_decay_db: f64,
    /// Reflection Doppler offsets are uniform in `[−spread, spread]`, Hz.
    #[serde(default)]
    pub doppler_spread: f64,
    /// Draw Rayleigh-distributed magnitudes instead of fixed ones.
    #[serde(default)]
    pub rayleigh: bool,
    /// Minimum spacing between consecutive reflections, s. Later reflections
    /// are pushed back to honour it; draws that then overrun the maximum
    /// excess delay are repeated.
    #[serde(default)]
    pub min_separation: f64,
}

impl ChannelProfile {
    /// A single direct path.
    pub fn single_path() -> Self {
        Self {
            num_paths: 1,
            direct_attenuation_db: 0.0,
            min_excess_delay: 0.0,
            excess_delay_mean: 0.0,
            max_excess_delay: 0.0,
            reflection_power_db: 0.0,
            gain_decay_db: 0.0,
            doppler_spread: 0.0,
            rayleigh: false,
            min_separation: 0.0,
        }
    }

    pub fn to_spec(&self, direct_delay: f64, seed: u64) -> NlosChannelSpec {
        NlosChannelSpec {
            profile: *self,
            direct_delay,
            seed,
        }
    }
}

/// A channel profile bound to a direct-path delay and a seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlosChannelSpec {
    pub profile: ChannelProfile,
    /// Near-direct two-way delay τ_1, s.
    pub direct_delay: f64,
    pub seed: u64,
}

impl NlosChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let p = &self.profile;
        if p.num_paths == 0 {
            return Err(Error::Config("channel needs at least one path".into()));
        }
        if !(self.direct_delay >= 0.0 && self.direct_delay.is_finite()) {
            return Err(Error::Config(format!("negative direct delay {}", self.direct_delay)));
        }
        if p.num_paths > 1 {
            if !(p.min_excess_delay > 0.0) {
                return Err(Error::Config("reflections need a positive minimum excess delay".into()));
            }
            if p.excess_delay_mean < 0.0 || p.max_excess_delay < p.min_excess_delay {
                return Err(Error::Config(format!(
                    "excess delay bounds are inconsistent: min {}, mean {}, max {}",
                    p.min_excess_delay, p.excess_delay_mean, p.max_excess_delay
                )));
            }
            if p.doppler_spread < 0.0 {
                return Err(Error::Config("doppler spread must be >= 0".into()));
            }
            let span = (p.num_paths - 2) as f64 * p.min_separation;
            if p.min_separation < 0.0 || p.min_excess_delay + span > p.max_excess_delay * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "{} reflections spaced {} s do not fit between {} s and {} s",
                    p.num_paths - 1,
                    p.min_separation,
                    p.min_excess_delay,
                    p.max_excess_delay
                )));
            }
        }
        Ok(())
    }
}

/// Draws one channel realization. Path 0 is the near-direct path; the rest
/// are reflections sorted by delay, all strictly later than path 0. Doppler
/// values are offsets added to the geometric Doppler (zero for path 0).
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn synthesize_channel(spec: &NlosChannelSpec) -> Result<Vec<PathParams>> {
    spec.validate()?;
    let p = &spec.profile;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let direct_amp = 10f64.powf(-p.direct_attenuation_db / 20.0);
    let direct_phase = rng.random_range(0.0..2.0 * PI);
    let mut paths = vec![PathParams::new(
        C64::from_polar(direct_amp, direct_phase),
        spec.direct_delay,
        0.0,
    )];

    let n_refl = p.num_paths - 1;
    let mut excess = Vec::new();
    for attempt in 0.. {
        excess = (0..n_refl)
            .map(|_| {
                let extra = if p.excess_delay_mean > 0.0 {
                    Exp::new(1.0 / p.excess_delay_mean)
                        .expect("positive rate")
                        .sample(&mut rng)
                } else {
                    0.0
                };
                (p.min_excess_delay + extra).min(p.max_excess_delay)
            })
            .collect();
        excess.sort_by(f64::total_cmp);
        for k in 1..excess.len() {
            excess[k] = excess[k].max(excess[k - 1] + p.min_separation);
        }
        if excess.last().is_none_or(|&e| e <= p.max_excess_delay * (1.0 + 1e-12)) {
            break;
        }
        if attempt == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Config(format!(
                "could not place {n_refl} reflections {} s apart below {} s",
                p.min_separation, p.max_excess_delay
            )));
        }
    }

    for (k, e) in excess.into_iter().enumerate() {
        let power = 10f64.powf((p.reflection_power_db - p.gain_decay_db * k as f64) / 10.0);
        let gain = if p.rayleigh {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * (power / 2.0).sqrt()
        } else {
            C64::from_polar(power.sqrt(), rng.random_range(0.0..2.0 * PI))
        };
        let doppler = if p.doppler_spread > 0.0 {
            rng.random_range(-p.doppler_spread..=p.doppler_spread)
        } else {
            0.0
        };
        paths.push(PathParams::new(gain, spec.direct_delay + e, doppler));
    }
    Ok(paths)
}

/// Where the propagation phase lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// Gains are range-independent; the renderer applies the antenna envelope
    /// and `exp(−j2π f_c τ(η))` per path.
    #[default]
    Explicit,
    /// Envelope and carrier phase are already folded into each `α(η)`.
    Folded,
}

/// Per-pulse path lists for a whole scene, all pulses sharing one slot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    /// `per_pulse[i][slot]`: absolute two-way delay, gain and Doppler.
    pub per_pulse: Vec<Vec<PathParams>>,
    /// Owning target of each slot.
    pub target: Vec<usize>,
    /// Whether each slot is a target's near-direct path.
    pub direct: Vec<bool>,
    pub convention: PhaseConvention,
}

impl ScenePaths {
    /// Expands per-target channel realizations along the trajectory. Excess
    /// delay and Doppler offset of every path stay fixed; the geometric part
    /// follows `R(η)`.
    pub fn along_track(
        cfg: &OfdmConfig,
        traj: &PlatformTrajectory,
        antenna: &AntennaPattern,
        targets: &[GroundTarget],
        channels: &[Vec<PathParams>],
        convention: PhaseConvention,
    ) -> Result<Self> {
        if targets.len() != channels.len() {
            return Err(Error::Dimension(format!(
                "{} targets but {} channel realizations",
                targets.len(),
                channels.len()
            )));
        }
        let lambda = cfg.wavelength();
        let mut target = Vec::new();
        let mut direct = Vec::new();
        for (m, ch) in channels.iter().enumerate() {
            for l in 0..ch.len() {
                target.push(m);
                direct.push(l == 0);
            }
        }
        let per_pulse = (0..traj.num_pulses)
            .map(|i| {
                let eta = traj.slow_time(i);
                let mut out = Vec::with_capacity(target.len());
                for (tgt, ch) in targets.iter().zip(channels) {
                    let base = ch[0].delay;
                    let tau0 = 2.0 * slant_range(traj, tgt, eta) / SPEED_OF_LIGHT;
                    let fd0 = geometric_doppler(traj, tgt, eta, lambda);
                    let env = azimuth_envelope(antenna, look_angle(traj, tgt, eta));
                    for p in ch {
                        let delay = tau0 + (p.delay - base);
                        let mut gain = tgt.rcs * p.gain;
                        if convention == PhaseConvention::Folded {
                            gain *= env * C64::from_polar(1.0, -2.0 * PI * cfg.carrier_freq * delay);
                        }
                        out.push(PathParams::new(gain, delay, fd0 + p.doppler));
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            per_pulse,
            target,
            direct,
            convention,
        })
    }

    pub fn num_pulses(&self) -> usize {
        self.per_pulse.len()
    }

    /// Largest absolute delay over all pulses and paths.
    pub fn max_delay(&self) -> f64 {
        self.per_pulse
            .iter()
            .flatten()
            .map(|p| p.delay)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `pulse_index,path,re_alpha,im_alpha,tau_s,doppler_hz`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pulse_index", "path", "re_alpha", "im_alpha", "tau_s", "doppler_hz"])?;
        for (i, paths) in self.per_pulse.iter().enumerate() {
            for (l, p) in paths.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    l.to_string(),
                    p.gain.re.to_string(),
                    p.gain.im.to_string(),
                    p.delay.to_string(),
                    p.doppler.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Fast-time receive window shared by every pulse, aligned to the sample clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastTimeWindow {
    /// Absolute time (since transmit) of sample 0, s.
    pub start: f64,
    pub n_samples: usize,
    pub dt: f64,
}

impl FastTimeWindow {
    /// `[2R_min/c − guard, 2R_max/c + max_excess + T + T_CP + guard]`, with
    /// the range extremes taken over all targets and pulses.
    pub fn for_scene(
        cfg: &OfdmConfig,
        traj: &PlatformTrajectory,
        targets: &[GroundTarget],
        max_excess_delay: f64,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Config("scene has no targets".into()));
        }
        let (mut r_min, mut r_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in targets {
            for i in 0..traj.num_pulses {
                let r = slant_range(traj, t, traj.slow_time(i));
                r_min = r_min.min(r);
                r_max = r_max.max(r);
            }
        }
        let fs = cfg.sample_rate;
        let first = (2.0 * r_min / SPEED_OF_LIGHT * fs).floor() as i64 - WINDOW_GUARD as i64;
        let first = first.max(0);
        let end = 2.0 * r_max / SPEED_OF_LIGHT + max_excess_delay.max(0.0)
            + cfg.symbol_duration()
            + cfg.cp_duration;
        let last = (end * fs).ceil() as i64 + WINDOW_GUARD as i64;
        Ok(Self {
            start: first as f64 / fs,
            n_samples: (last - first) as usize,
            dt: 1.0 / fs,
        })
    }

    pub fn end(&self) -> f64 {
        self.start + self.n_samples as f64 * self.dt
    }
}

/// Received samples u(t, η): one row per pulse, `n_samples` fast-time columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoCube {
    /// Shape `(num_pulses, n_samples)`.
    pub samples: Array2<C64>,
    /// Absolute fast-time origin of each pulse, s.
    pub fast_time_origin: Vec<f64>,
    pub dt: f64,
    /// Complex noise variance σ² added per sample (0 when noiseless).
    pub noise_power: f64,
    /// Mean per-sample power of the near-direct paths over their support.
    pub direct_power: f64,
}

impl EchoCube {
    pub fn zeros(num_pulses: usize, window: &FastTimeWindow) -> Self {
        Self {
            samples: Array2::zeros((num_pulses, window.n_samples)),
            fast_time_origin: vec![window.start; num_pulses],
            dt: window.dt,
            noise_power: 0.0,
            direct_power: 0.0,
        }
    }

    pub fn num_pulses(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn pulse(&self, i: usize) -> &[C64] {
        self.samples
            .row(i)
            .to_slice()
            .expect("cube rows are contiguous")
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.samples.len().max(1) as f64
    }
}

/// Paths as the receiver sees them on one pulse: delays relative to the
/// window origin, gains including envelope and carrier phase.
pub fn effective_paths(
    cfg: &OfdmConfig,
    traj: &PlatformTrajectory,
    antenna: &AntennaPattern,
    targets: &[GroundTarget],
    paths: &ScenePaths,
    window: &FastTimeWindow,
    pulse: usize,
) -> Vec<PathParams> {
    let eta = traj.slow_time(pulse);
    paths.per_pulse[pulse]
        .iter()
        .zip(&paths.target)
        .map(|(p, &m)| {
            let gain = match paths.convention {
                PhaseConvention::Folded => p.gain,
                PhaseConvention::Explicit => {
                    let env = azimuth_envelope(antenna, look_angle(traj, &targets[m], eta));
                    p.gain * env * C64::from_polar(1.0, -2.0 * PI * cfg.carrier_freq * p.delay)
                }
            };
            PathParams::new(gain, p.delay - window.start, p.doppler)
        })
        .collect()
}

/// Renders `u(t, η) = Σ_ℓ α_ℓ(η)·ε_a·exp(−j2πf_cτ_ℓ(η))·s(t − τ_ℓ(η))·exp(j2πf_{d,ℓ}t) + w`,
/// with `t` measured from the window origin.
///
/// With `snr_db = Some(x)` complex white Gaussian noise is added so that the
/// per-sample SNR over the near-direct path support is `x` dB. Noise for
/// pulse `i` comes from stream `i` of a ChaCha8 generator keyed by `seed`,
/// so the result does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn render_echo(
    bank: &ReplicaBank,
    traj: &PlatformTrajectory,
    antenna: &AntennaPattern,
    targets: &[GroundTarget],
    paths: &ScenePaths,
    window: &FastTimeWindow,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<EchoCube> {
    traj.validate()?;
    let cfg = bank.config();
    if bank.n_samples() != window.n_samples {
        return Err(Error::Dimension(format!(
            "replica bank has {} samples, window has {}",
            bank.n_samples(),
            window.n_samples
        )));
    }
    if paths.num_pulses() != traj.num_pulses {
        return Err(Error::Dimension(format!(
            "{} pulses of paths for a {}-pulse trajectory",
            paths.num_pulses(),
            traj.num_pulses
        )));
    }
    let span = cfg.symbol_duration() + cfg.cp_duration;
    let tol = 1e-9 * window.dt;
    let mut cube = EchoCube::zeros(traj.num_pulses, window);
    let mut direct_acc = 0.0;
    let mut direct_count = 0usize;
    for i in 0..traj.num_pulses {
        let eff = effective_paths(cfg, traj, antenna, targets, paths, window, i);
        let mut row = cube.samples.row_mut(i);
        let row = row.as_slice_mut().expect("cube rows are contiguous");
        for (slot, p) in eff.iter().enumerate() {
            let abs = paths.per_pulse[i][slot].delay;
            if p.delay < -tol || abs + span > window.end() + tol {
                return Err(Error::EchoOutsideWindow {
                    delay: abs,
                    window_start: window.start,
                    window_end: window.end(),
                });
            }
            bank.accumulate(row, p.gain, p.delay.max(0.0), p.doppler);
            if paths.direct[slot] {
                let (a, b) = bank.support(p.delay.max(0.0));
                let per_sample = bank.energy(p.delay.max(0.0)) / (b - a).max(1) as f64;
                direct_acc += p.gain.norm_sqr() * per_sample;
                direct_count += 1;
            }
        }
    }
    cube.direct_power = if direct_count > 0 {
        direct_acc / direct_count as f64
    } else {
        0.0
    };

    if let Some(snr) = snr_db {
        if !snr.is_finite() {
            return Err(Error::Argument(format!("snr must be finite, got {snr}")));
        }
        if cube.direct_power <= 0.0 {
            return Err(Error::Config(
                "SNR is referenced to the direct paths, which carry no power".into(),
            ));
        }
        let sigma2 = cube.direct_power / 10f64.powf(snr / 10.0);
        add_noise(&mut cube, sigma2, seed);
    }
    Ok(cube)
}

/// Adds CN(0, σ²) noise, stream `i` for pulse `i`.
pub fn add_noise(cube: &mut EchoCube, sigma2: f64, seed: u64) {
    let scale = (sigma2 / 2.0).sqrt();
    for (i, mut row) in cube.samples.rows_mut().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for v in row.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += C64::new(re, im) * scale;
        }
    }
    cube.noise_power += sigma2;
}

/// Receiver output with nothing transmitted: the noise floor estimate used
/// by the OMP stopping rule.
pub fn measure_noise_power(window: &FastTimeWindow, num_pulses: usize, sigma2: f64, seed: u64) -> f64 {
    let mut cube = EchoCube::zeros(num_pulses, window);
    add_noise(&mut cube, sigma2, seed);
    cube.mean_power()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::ModulationSymbols;

    fn antenna(cfg: &OfdmConfig) -> AntennaPattern {
        AntennaPattern::new(cfg.wavelength(), 0.2).unwrap()
    }

    #[test]
    fn slant_range_examples() {
        let traj = PlatformTrajectory::desk();
        let tgt = GroundTarget::new(0.0, 0.0);
        assert_eq!(slant_range(&traj, &tgt, 0.0), 1000.0);
        let r = slant_range(&traj, &tgt, 1.0);
        assert!((r - 1000.7997).abs() < 1e-4);
        assert_eq!(slant_range(&traj, &tgt, -0.3), slant_range(&traj, &tgt, 0.3));
    }

    #[test]
    fn envelope_examples() {
        let pat = AntennaPattern::new(0.01, 0.2).unwrap();
        let b = pat.beamwidth();
        assert_eq!(azimuth_envelope(&pat, 0.0), 1.0);
        assert!(azimuth_envelope(&pat, PI * b / 0.886) < 1e-30);
        let x: f64 = 0.443;
        let want = (x.sin() / x).powi(2);
        assert!((azimuth_envelope(&pat, b / 2.0) - want).abs() < 1e-15);
        assert!((want - 0.9363).abs() < 1e-3);
        assert!(AntennaPattern::new(0.01, 0.0).is_err());
    }

    #[test]
    fn single_path_channel_is_geometric_delay() {
        let traj = PlatformTrajectory::desk();
        let r = GroundTarget::new(300.0, 0.0).closest_range(&traj);
        let spec = ChannelProfile::single_path().to_spec(2.0 * r / SPEED_OF_LIGHT, 4);
        let paths = synthesize_channel(&spec).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].delay, 2.0 * r / SPEED_OF_LIGHT);
    }

    fn nlos_profile() -> ChannelProfile {
        ChannelProfile {
            num_paths: 4,
            direct_attenuation_db: 6.0,
            min_excess_delay: 3.0 / 30.72e6,
            excess_delay_mean: 4.0 / 30.72e6,
            max_excess_delay: 20.0 / 30.72e6,
            reflection_power_db: 0.0,
            gain_decay_db: 1.5,
            doppler_spread: 1000.0,
            rayleigh: false,
            min_separation: 0.0,
        }
    }

    #[test]
    fn nlos_direct_path_is_earliest_but_not_strongest() {
        for seed in 0..50 {
            let paths = synthesize_channel(&nlos_profile().to_spec(6.9e-6, seed)).unwrap();
            assert_eq!(paths.len(), 4);
            assert!(paths[1..].iter().all(|p| p.delay > paths[0].delay));
            let strongest = paths
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.gain.norm().total_cmp(&b.1.gain.norm()))
                .unwrap()
                .0;
            assert_ne!(strongest, 0);
        }
        let a = synthesize_channel(&nlos_profile().to_spec(6.9e-6, 8)).unwrap();
        let b = synthesize_channel(&nlos_profile().to_spec(6.9e-6, 8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_channel_specs() {
        let mut p = nlos_profile();
        p.num_paths = 0;
        assert!(synthesize_channel(&p.to_spec(1e-6, 0)).is_err());
        assert!(synthesize_channel(&nlos_profile().to_spec(-1e-6, 0)).is_err());
        let mut p = nlos_profile();
        p.min_excess_delay = 0.0;
        assert!(synthesize_channel(&p.to_spec(1e-6, 0)).is_err());
        let mut p = nlos_profile();
        p.min_separation = 9.0 / 30.72e6;
        assert!(synthesize_channel(&p.to_spec(1e-6, 0)).is_err());
    }

    #[test]
    fn reflections_respect_spacing_and_bounds() {
        let mut p = nlos_profile();
        p.min_separation = 3.0 / 30.72e6;
        for seed in 0..200 {
            let paths = synthesize_channel(&p.to_spec(6.9e-6, seed)).unwrap();
            for w in paths[1..].windows(2) {
                assert!(w[1].delay - w[0].delay >= p.min_separation * (1.0 - 1e-9));
            }
            let last = paths[3].delay - paths[0].delay;
            assert!(last <= p.max_excess_delay * (1.0 + 1e-9));
            assert!(paths[1].delay - paths[0].delay >= p.min_excess_delay * (1.0 - 1e-9));
        }
    }

    struct Fixture {
        cfg: OfdmConfig,
        traj: PlatformTrajectory,
        ant: AntennaPattern,
        bank: ReplicaBank,
        window: FastTimeWindow,
    }

    fn fixture(targets: &[GroundTarget], pulses: usize) -> Fixture {
        let cfg = OfdmConfig::desk();
        let traj = PlatformTrajectory {
            num_pulses: pulses,
            ..PlatformTrajectory::desk()
        };
        let ant = antenna(&cfg);
        let window = FastTimeWindow::for_scene(&cfg, &traj, targets, 20.0 / cfg.sample_rate).unwrap();
        let syms = ModulationSymbols::qpsk(cfg.subcarriers, 1);
        let bank = ReplicaBank::new(&cfg, &syms, window.n_samples, 16).unwrap();
        Fixture {
            cfg,
            traj,
            ant,
            bank,
            window,
        }
    }

    fn single_paths(f: &Fixture, targets: &[GroundTarget], conv: PhaseConvention) -> ScenePaths {
        let chans: Vec<_> = targets
            .iter()
            .map(|t| {
                let d = 2.0 * t.closest_range(&f.traj) / SPEED_OF_LIGHT;
                synthesize_channel(&ChannelProfile::single_path().to_spec(d, 0)).unwrap()
            })
            .collect();
        ScenePaths::along_track(&f.cfg, &f.traj, &f.ant, targets, &chans, conv).unwrap()
    }

    #[test]
    fn zero_gain_renders_zero_cube() {
        let targets = [GroundTarget {
            rcs: C64::new(0.0, 0.0),
            ..GroundTarget::new(300.0, 0.0)
        }];
        let f = fixture(&targets, 4);
        let paths = single_paths(&f, &targets, PhaseConvention::Explicit);
        let cube = render_echo(&f.bank, &f.traj, &f.ant, &targets, &paths, &f.window, None, 0).unwrap();
        assert!(cube.samples.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn conventions_render_the_same_cube() {
        let targets = [GroundTarget::new(300.0, 0.5)];
        let f = fixture(&targets, 8);
        let a = single_paths(&f, &targets, PhaseConvention::Explicit);
        let b = single_paths(&f, &targets, PhaseConvention::Folded);
        let ca = render_echo(&f.bank, &f.traj, &f.ant, &targets, &a, &f.window, None, 0).unwrap();
        let cb = render_echo(&f.bank, &f.traj, &f.ant, &targets, &b, &f.window, None, 0).unwrap();
        for (x, y) in ca.samples.iter().zip(cb.samples.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn echo_is_linear_in_targets() {
        let t1 = GroundTarget::new(300.0, 0.0);
        let t2 = GroundTarget {
            rcs: C64::new(0.3, -0.7),
            ..GroundTarget::new(310.0, 1.0)
        };
        let both = [t1, t2];
        let f = fixture(&both, 6);
        let render = |ts: &[GroundTarget]| {
            let p = single_paths(&f, ts, PhaseConvention::Explicit);
            render_echo(&f.bank, &f.traj, &f.ant, ts, &p, &f.window, None, 0).unwrap()
        };
        let sum = render(&both);
        let a = render(&[t1]);
        let b = render(&[t2]);
        let scale = sum.samples.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for ((s, x), y) in sum.samples.iter().zip(a.samples.iter()).zip(b.samples.iter()) {
            assert!((s - x - y).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn echo_outside_window_is_reported() {
        let targets = [GroundTarget::new(300.0, 0.0)];
        let f = fixture(&targets, 2);
        let mut paths = single_paths(&f, &targets, PhaseConvention::Explicit);
        for p in paths.per_pulse.iter_mut().flatten() {
            p.delay += 100.0 * f.window.dt;
        }
        let err = render_echo(&f.bank, &f.traj, &f.ant, &targets, &paths, &f.window, None, 0).unwrap_err();
        assert!(matches!(err, Error::EchoOutsideWindow { .. }));
    }

    #[test]
    fn noiseless_on_grid_path_peaks_at_its_delay_bin() {
        let targets = [GroundTarget::new(300.0, 0.0)];
        let f = fixture(&targets, 1);
        let mut paths = single_paths(&f, &targets, PhaseConvention::Explicit);
        let bin = 17usize;
        paths.per_pulse[0][0].delay = f.window.start + bin as f64 * f.window.dt;
        let cube = render_echo(&f.bank, &f.traj, &f.ant, &targets, &paths, &f.window, None, 0).unwrap();
        let u = cube.pulse(0);
        let s0 = f.bank.replica(0.0, 0.0);
        let len = f.cfg.symbol_samples();
        let best = (0..=u.len() - len)
            .map(|p| {
                let c: C64 = (0..len).map(|n| u[p + n] * s0[n].conj()).sum();
                (p, c.norm())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(best.0, bin);
    }

    #[test]
    fn noise_matches_requested_snr() {
        let targets = [GroundTarget::new(300.0, 0.0)];
        let f = fixture(&targets, 400);
        let paths = single_paths(&f, &targets, PhaseConvention::Explicit);
        let clean = render_echo(&f.bank, &f.traj, &f.ant, &targets, &paths, &f.window, None, 3).unwrap();
        let noisy = render_echo(&f.bank, &f.traj, &f.ant, &targets, &paths, &f.window, Some(12.0), 3).unwrap();
        assert!(noisy.samples.len() >= 100_000);
        let mut sig = 0.0;
        let mut count = 0usize;
        for i in 0..clean.num_pulses() {
            let eff = effective_paths(&f.cfg, &f.traj, &f.ant, &targets, &paths, &f.window, i);
            let (a, b) = f.bank.support(eff[0].delay);
            for n in a..b {
                sig += clean.samples[[i, n]].norm_sqr();
                count += 1;
            }
        }
        sig /= count as f64;
        let noise: f64 = noisy
            .samples
            .iter()
            .zip(clean.samples.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / noisy.samples.len() as f64;
        let measured = 10.0 * (sig / noise).log10();
        assert!((measured - 12.0).abs() < 0.3, "measured {measured} dB");
        let floor = measure_noise_power(&f.window, 400, noisy.noise_power, 99);
        assert!((floor / noisy.noise_power - 1.0).abs() < 0.02);
    }
}
