//! CP-OFDM baseband symbol generation and sampled replicas.
//!
//! A symbol is `s(t) = N^{-1/2} Σ_k S_k exp(j2πkΔf(t − T_CP))` on
//! `[0, T + T_CP)`, zero elsewhere. Sampling at `f_s = os·N·Δf` makes the
//! useful part exactly one period of an `N·os`-point inverse DFT, so a replica
//! at any (fractional) delay is an inverse FFT of phase-ramped symbols,
//! indexed cyclically. This is the same closed form as direct summation over
//! subcarriers, which [`evaluate`] implements for reference.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64, SPEED_OF_LIGHT};

/// Numerical slack used when deciding whether a sample sits on a support edge.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    /// Carrier frequency f_c, Hz.
    pub carrier_freq: f64,
    /// Subcarrier count N (also the IFFT size at critical sampling).
    pub subcarriers: usize,
    /// Subcarrier spacing Δf, Hz.
    pub subcarrier_spacing: f64,
    /// Cyclic prefix duration T_CP, s.
    pub cp_duration: f64,
    /// Sampling rate f_s, Hz. Must be an integer multiple of N·Δf.
    pub sample_rate: f64,
}

impl OfdmConfig {
    /// Builds a config with the CP given in samples at the chosen sampling rate.
    pub fn new(
        carrier_freq: f64,
        subcarriers: usize,
        subcarrier_spacing: f64,
        cp_samples: usize,
        oversampling: usize,
    ) -> Result<Self> {
        if oversampling == 0 {
            return Err(Error::Config("oversampling factor must be >= 1".into()));
        }
        let sample_rate = subcarriers as f64 * subcarrier_spacing * oversampling as f64;
        let cfg = Self {
            carrier_freq,
            subcarriers,
            subcarrier_spacing,
            cp_duration: cp_samples as f64 / sample_rate,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-scale numerology: 26 GHz carrier, 120 kHz SCS, 4096-point FFT,
    /// 36-sample CP, critically sampled (491.52 MHz grid).
    pub fn table1() -> Self {
        Self::new(26e9, 4096, 120e3, 36, 1).expect("static config is valid")
    }

    /// Reduced profile used by tests and the default scenarios: same carrier
    /// and SCS, 256 subcarriers, 32-sample CP.
    pub fn desk() -> Self {
        Self::new(26e9, 256, 120e3, 32, 1).expect("static config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 {
            return Err(Error::Config("subcarrier count must be >= 1".into()));
        }
        if !(self.subcarrier_spacing > 0.0 && self.subcarrier_spacing.is_finite()) {
            return Err(Error::Config(format!(
                "subcarrier spacing must be positive, got {}",
                self.subcarrier_spacing
            )));
        }
        if !(self.cp_duration >= 0.0 && self.cp_duration.is_finite()) {
            return Err(Error::Config(format!(
                "cyclic prefix duration must be >= 0, got {}",
                self.cp_duration
            )));
        }
        if !(self.carrier_freq >= 0.0 && self.carrier_freq.is_finite()) {
            return Err(Error::Config("carrier frequency must be finite and >= 0".into()));
        }
        let b = self.bandwidth();
        if !(self.sample_rate.is_finite() && self.sample_rate >= b * (1.0 - 1e-12)) {
            return Err(Error::Config(format!(
                "sample rate {} Hz is below the OFDM grid bandwidth {} Hz",
                self.sample_rate, b
            )));
        }
        let ratio = self.sample_rate / b;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sample rate must be an integer multiple of N*df, ratio is {ratio}"
            )));
        }
        Ok(())
    }

    /// Useful symbol duration T = 1/Δf.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// Grid bandwidth B = N·Δf.
    pub fn bandwidth(&self) -> f64 {
        self.subcarriers as f64 * self.subcarrier_spacing
    }

    pub fn oversampling(&self) -> usize {
        (self.sample_rate / self.bandwidth()).round() as usize
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Samples per useful symbol period, N·os.
    pub fn fft_len(&self) -> usize {
        self.subcarriers * self.oversampling()
    }

    /// CP length in (possibly fractional) samples.
    pub fn cp_samples(&self) -> f64 {
        self.cp_duration * self.sample_rate
    }

    /// Samples in one CP + symbol, `round((T + T_CP)·f_s)`.
    pub fn symbol_samples(&self) -> usize {
        ((self.symbol_duration() + self.cp_duration) * self.sample_rate).round() as usize
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Slant-range resolution c/(2B).
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth())
    }
}

/// Frequency-domain symbols `S_k`, power-normalized so that `Σ|S_k|² = N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSymbols {
    pub symbols: Vec<C64>,
    /// Subcarriers that carry a symbol; unused edge subcarriers are `false`.
    pub occupied: Vec<bool>,
    /// Seed the symbols were drawn from, when pseudo-random.
    pub seed: Option<u64>,
}

impl ModulationSymbols {
    /// Unit-modulus QPSK on every subcarrier.
    pub fn qpsk(n: usize, seed: u64) -> Self {
        Self::qpsk_centered(n, n, seed).expect("full occupancy is always valid")
    }

    /// QPSK on the `occupied` central subcarriers, zero on the edges, scaled
    /// so the total power is still N.
    pub fn qpsk_centered(n: usize, occupied: usize, seed: u64) -> Result<Self> {
        if n == 0 || occupied == 0 || occupied > n {
            return Err(Error::Argument(format!(
                "occupied subcarriers must be in 1..={n}, got {occupied}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = (n as f64 / occupied as f64).sqrt();
        let first = (n - occupied) / 2;
        let mut symbols = vec![C64::new(0.0, 0.0); n];
        let mut mask = vec![false; n];
        for k in first..first + occupied {
            let quadrant: u8 = rng.random_range(0..4);
            let phase = PI / 4.0 + PI / 2.0 * quadrant as f64;
            symbols[k] = C64::from_polar(amp, phase);
            mask[k] = true;
        }
        Ok(Self {
            symbols,
            occupied: mask,
            seed: Some(seed),
        })
    }

    /// Wraps arbitrary symbols, rescaling them to `Σ|S_k|² = N`. Non-zero
    /// entries are treated as occupied.
    pub fn from_symbols(symbols: Vec<C64>) -> Result<Self> {
        let n = symbols.len();
        let power: f64 = symbols.iter().map(|s| s.norm_sqr()).sum();
        if n == 0 || power <= 0.0 || !power.is_finite() {
            return Err(Error::Argument("symbols must be non-empty with finite, non-zero power".into()));
        }
        let scale = (n as f64 / power).sqrt();
        let occupied = symbols.iter().map(|s| s.norm_sqr() > 0.0).collect();
        Ok(Self {
            symbols: symbols.into_iter().map(|s| s * scale).collect(),
            occupied,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    fn check_against(&self, cfg: &OfdmConfig) -> Result<()> {
        if self.symbols.len() != cfg.subcarriers {
            return Err(Error::Dimension(format!(
                "{} symbols for {} subcarriers",
                self.symbols.len(),
                cfg.subcarriers
            )));
        }
        let n = cfg.subcarriers as f64;
        if ((self.power() - n) / n).abs() > 1e-12 {
            return Err(Error::Argument(format!(
                "symbol power {} differs from N = {n}",
                self.power()
            )));
        }
        Ok(())
    }
}

/// Uniformly sampled complex baseband signal.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    pub samples: Vec<C64>,
    /// Time of the first sample, s.
    pub t0: f64,
    /// Sample spacing, s.
    pub dt: f64,
}

impl BasebandSignal {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power over the useful interval `[T_CP, T_CP + T)`.
    pub fn useful_power(&self, cfg: &OfdmConfig) -> f64 {
        let start = ((cfg.cp_duration - self.t0) / self.dt).round().max(0.0) as usize;
        let end = (start + cfg.fft_len()).min(self.samples.len());
        let slice = &self.samples[start..end];
        slice.iter().map(|s| s.norm_sqr()).sum::<f64>() / slice.len() as f64
    }
}

/// Evaluates `s(t)` by direct summation over subcarriers.
pub fn evaluate(cfg: &OfdmConfig, syms: &ModulationSymbols, t: f64) -> C64 {
    let span = cfg.symbol_duration() + cfg.cp_duration;
    if t < 0.0 || t >= span {
        return C64::new(0.0, 0.0);
    }
    let n = cfg.subcarriers;
    let w = 2.0 * PI * cfg.subcarrier_spacing * (t - cfg.cp_duration);
    let sum: C64 = syms
        .symbols
        .iter()
        .enumerate()
        .map(|(k, s)| s * C64::from_polar(1.0, w * k as f64))
        .sum();
    sum / (n as f64).sqrt()
}

/// Samples one CP-OFDM symbol on `t_n = n/f_s`, `n < round((T + T_CP)·f_s)`.
pub fn generate_ofdm_symbol(cfg: &OfdmConfig, syms: &ModulationSymbols) -> Result<BasebandSignal> {
    cfg.validate()?;
    syms.check_against(cfg)?;
    let len = cfg.symbol_samples();
    let dt = cfg.sample_period();
    let grid: Vec<f64> = (0..len).map(|n| n as f64 * dt).collect();
    let samples = sample_replica(cfg, syms, 0.0, 0.0, &grid)?;
    Ok(BasebandSignal {
        samples,
        t0: 0.0,
        dt,
    })
}

/// Returns `s(t_n − τ)·exp(j2π f_d t_n)` on an arbitrary increasing grid.
///
/// Uniform grids at the sampling period use the FFT closed form; other grids
/// fall back to [`evaluate`].
pub fn sample_replica(
    cfg: &OfdmConfig,
    syms: &ModulationSymbols,
    delay: f64,
    doppler: f64,
    t_grid: &[f64],
) -> Result<Vec<C64>> {
    cfg.validate()?;
    syms.check_against(cfg)?;
    if !(delay >= 0.0 && delay.is_finite()) {
        return Err(Error::Argument(format!("delay must be finite and >= 0, got {delay}")));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("time grid must be strictly increasing".into()));
    }
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    let dt = cfg.sample_period();
    let uniform = t_grid
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt);
    if !uniform {
        return Ok(t_grid
            .iter()
            .map(|&t| evaluate(cfg, syms, t - delay) * C64::from_polar(1.0, 2.0 * PI * doppler * t))
            .collect());
    }

    let t0 = t_grid[0];
    let layout = SupportLayout::new(cfg, delay - t0, t_grid.len());
    let base = periodic_base(cfg, syms, layout.phase, &plan_inverse(cfg.fft_len()));
    let m = base.len() as i64;
    let mut out = vec![C64::new(0.0, 0.0); t_grid.len()];
    for n in layout.start..layout.end {
        let idx = (n as i64 - layout.shift).rem_euclid(m) as usize;
        out[n] = base[idx] * C64::from_polar(1.0, 2.0 * PI * doppler * t_grid[n]);
    }
    Ok(out)
}

fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(len)
}

/// One period of the symbol body for a fractional sample phase `phi`:
/// `q[m] = N^{-1/2} Σ_k S_k exp(j2πk(m − phi)/(N·os))`.
fn periodic_base(
    cfg: &OfdmConfig,
    syms: &ModulationSymbols,
    phi: f64,
    ifft: &Arc<dyn Fft<f64>>,
) -> Vec<C64> {
    let m = cfg.fft_len();
    let mut buf = vec![C64::new(0.0, 0.0); m];
    if phi == 0.0 {
        buf[..syms.len()].copy_from_slice(&syms.symbols);
    } else {
        let w = -2.0 * PI * phi / m as f64;
        let step = C64::from_polar(1.0, w);
        let mut rot = C64::new(1.0, 0.0);
        for (k, s) in syms.symbols.iter().enumerate() {
            if k % 64 == 0 {
                rot = C64::from_polar(1.0, w * k as f64);
            }
            buf[k] = s * rot;
            rot *= step;
        }
    }
    ifft.process(&mut buf);
    let scale = 1.0 / (cfg.subcarriers as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Where a delayed symbol lands on a uniform grid `n = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SupportLayout {
    /// Integer part of `(τ + T_CP)/dt`; sample `n` reads base index `n − shift`.
    shift: i64,
    /// Fractional part of `(τ + T_CP)/dt` in `[0, 1)`.
    phase: f64,
    /// First sample inside the support (clipped to the grid).
    start: usize,
    /// One past the last sample inside the support (clipped to the grid).
    end: usize,
}

impl SupportLayout {
    /// `rel_delay` is the delay measured from the time of grid sample 0.
    fn new(cfg: &OfdmConfig, rel_delay: f64, len: usize) -> Self {
        let fs = cfg.sample_rate;
        let d = rel_delay * fs;
        let c = d + cfg.cp_samples();
        let mut shift = c.floor();
        let mut phase = c - shift;
        if phase > 1.0 - EDGE_EPS {
            shift += 1.0;
            phase = 0.0;
        } else if phase < EDGE_EPS {
            phase = 0.0;
        }
        let span = (cfg.symbol_duration() + cfg.cp_duration) * fs;
        let first = (d - EDGE_EPS).ceil().max(0.0);
        let last = (d + span - EDGE_EPS).ceil().max(0.0);
        let start = (first as usize).min(len);
        let end = (last as usize).min(len).max(start);
        Self {
            shift: shift as i64,
            phase,
            start,
            end,
        }
    }
}

/// Number of Taylor terms after which `reach^k / k!` drops below 1e-17, or
/// `None` when the reach is too large for the series to pay off.
fn taylor_terms(reach: f64) -> Option<usize> {
    if reach > 2.0 {
        return None;
    }
    let mut term = 1.0;
    for k in 1..40 {
        term *= reach / k as f64;
        if term < 1e-17 {
            return Some(k);
        }
    }
    None
}

fn phase_key(phi: f64) -> i64 {
    (phi * (1u64 << 24) as f64).round() as i64
}

/// Replica generator on a fixed window-relative grid `t_n = n·dt`,
/// `n < n_samples`.
///
/// Keeps one period of the symbol body for each fractional sample phase on a
/// `1/fractions` lattice, so delays on that lattice cost only an index shift
/// and a Doppler phasor. Other delays are synthesized on demand.
#[derive(Clone)]
pub struct ReplicaBank {
    cfg: OfdmConfig,
    symbols: ModulationSymbols,
    n_samples: usize,
    bases: HashMap<i64, Arc<[C64]>>,
    /// Off-lattice bases keyed by the exact phase bits; flushed when full.
    recent: Arc<Mutex<HashMap<u64, Arc<[C64]>>>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Byte budget for the off-lattice base cache.
const RECENT_BYTES: usize = 32 << 20;

impl fmt::Debug for ReplicaBank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReplicaBank")
            .field("cfg", &self.cfg)
            .field("n_samples", &self.n_samples)
            .field("cached_phases", &self.bases.len())
            .finish()
    }
}

impl ReplicaBank {
    pub fn new(
        cfg: &OfdmConfig,
        syms: &ModulationSymbols,
        n_samples: usize,
        fractions: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        syms.check_against(cfg)?;
        let ifft = plan_inverse(cfg.fft_len());
        let mut bases = HashMap::new();
        let cp = cfg.cp_samples();
        for j in 0..fractions.max(1) {
            let raw = cp + j as f64 / fractions.max(1) as f64;
            let mut phi = raw - raw.floor();
            if phi > 1.0 - EDGE_EPS || phi < EDGE_EPS {
                phi = 0.0;
            }
            bases
                .entry(phase_key(phi))
                .or_insert_with(|| Arc::from(periodic_base(cfg, syms, phi, &ifft)));
        }
        Ok(Self {
            cfg: *cfg,
            symbols: syms.clone(),
            n_samples,
            bases,
            recent: Arc::new(Mutex::new(HashMap::new())),
            ifft,
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    pub fn symbols(&self) -> &ModulationSymbols {
        &self.symbols
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dt(&self) -> f64 {
        self.cfg.sample_period()
    }

    fn base(&self, phi: f64) -> Arc<[C64]> {
        let key = phase_key(phi);
        if let Some(b) = self.bases.get(&key) {
            if (key as f64 - phi * (1u64 << 24) as f64).abs() < 1e-3 {
                return Arc::clone(b);
            }
        }
        let bits = phi.to_bits();
        if let Some(b) = self.recent.lock().expect("cache lock").get(&bits) {
            return Arc::clone(b);
        }
        let b: Arc<[C64]> = Arc::from(periodic_base(&self.cfg, &self.symbols, phi, &self.ifft));
        let cap = (RECENT_BYTES / (16 * self.cfg.fft_len())).max(16);
        let mut recent = self.recent.lock().expect("cache lock");
        if recent.len() >= cap {
            recent.clear();
        }
        recent.insert(bits, Arc::clone(&b));
        b
    }

    fn layout(&self, delay: f64) -> SupportLayout {
        SupportLayout::new(&self.cfg, delay, self.n_samples)
    }

    /// Sampled replica `s(n·dt − τ)·exp(j2π f_d n·dt)`.
    pub fn replica(&self, delay: f64, doppler: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.n_samples];
        self.accumulate(&mut out, C64::new(1.0, 0.0), delay, doppler);
        out
    }

    /// `out += gain · replica(τ, f_d)`.
    pub fn accumulate(&self, out: &mut [C64], gain: C64, delay: f64, doppler: f64) {
        debug_assert_eq!(out.len(), self.n_samples);
        let lay = self.layout(delay);
        if lay.start == lay.end {
            return;
        }
        let base = self.base(lay.phase);
        let m = base.len() as i64;
        let dt = self.dt();
        let mut rot = gain * C64::from_polar(1.0, 2.0 * PI * doppler * lay.start as f64 * dt);
        let step = C64::from_polar(1.0, 2.0 * PI * doppler * dt);
        let mut idx = (lay.start as i64 - lay.shift).rem_euclid(m) as usize;
        for o in &mut out[lay.start..lay.end] {
            *o += base[idx] * rot;
            rot *= step;
            idx += 1;
            if idx == base.len() {
                idx = 0;
            }
        }
    }

    /// Returns `(Σ_n u[n]·conj(r[n]), Σ_n |r[n]|²)` for `r = replica(τ, f_d)`.
    pub fn correlate(&self, u: &[C64], delay: f64, doppler: f64) -> (C64, f64) {
        let out = self.correlate_grid(u, &[delay], &[doppler]);
        out[0]
    }

    /// Correlations over the Cartesian grid `delays × dopplers`, delay-major.
    pub fn correlate_grid(&self, u: &[C64], delays: &[f64], dopplers: &[f64]) -> Vec<(C64, f64)> {
        debug_assert_eq!(u.len(), self.n_samples);
        let dt = self.dt();
        let mut out = Vec::with_capacity(delays.len() * dopplers.len());
        let mut z = Vec::with_capacity(self.n_samples);
        // Over half a window the Doppler phase stays small, so a short Taylor
        // series in the centred sample index replaces one pass per Doppler.
        let half = (self.n_samples as f64 / 2.0).max(1.0);
        let reach = dopplers.iter().fold(0.0f64, |m, f| m.max(f.abs())) * 2.0 * PI * dt * half;
        let terms = taylor_terms(reach);
        let taylor = terms.is_some_and(|k| k < 2 * dopplers.len());
        let mut phasors = Vec::new();
        if !taylor {
            phasors.reserve(dopplers.len() * self.n_samples);
            for &f in dopplers {
                let step = C64::from_polar(1.0, -2.0 * PI * f * dt);
                let mut rot = C64::new(1.0, 0.0);
                for n in 0..self.n_samples {
                    // re-anchor periodically to bound drift
                    if n % 64 == 0 {
                        rot = C64::from_polar(1.0, -2.0 * PI * f * n as f64 * dt);
                    }
                    phasors.push(rot);
                    rot *= step;
                }
            }
        }
        let mut moments = vec![C64::new(0.0, 0.0); terms.unwrap_or(0)];
        for &delay in delays {
            let lay = self.layout(delay);
            z.clear();
            let mut energy = 0.0;
            if lay.start < lay.end {
                let base = self.base(lay.phase);
                let m = base.len();
                let mut idx = (lay.start as i64 - lay.shift).rem_euclid(m as i64) as usize;
                for &x in &u[lay.start..lay.end] {
                    let b = base[idx];
                    energy += b.norm_sqr();
                    z.push(x * b.conj());
                    idx += 1;
                    if idx == m {
                        idx = 0;
                    }
                }
            }
            if taylor {
                let centre = lay.start as f64 + (z.len() as f64 - 1.0) / 2.0;
                moments.fill(C64::new(0.0, 0.0));
                for (i, &v) in z.iter().enumerate() {
                    let x = (lay.start as f64 + i as f64 - centre) / half;
                    let mut w = v;
                    for mk in moments.iter_mut() {
                        *mk += w;
                        w *= x;
                    }
                }
                for &f in dopplers {
                    let theta = -2.0 * PI * f * dt;
                    // Σ_k (jθ·half)^k / k! · moment_k, Horner form
                    let jt = C64::new(0.0, theta * half);
                    let mut acc = C64::new(0.0, 0.0);
                    for (k, mk) in moments.iter().enumerate().rev() {
                        acc = acc * jt / (k + 1) as f64 + mk;
                    }
                    out.push((acc * C64::from_polar(1.0, theta * centre), energy));
                }
            } else {
                for k in 0..dopplers.len() {
                    let ph = &phasors[k * self.n_samples + lay.start..][..z.len()];
                    let (mut re, mut im) = (0.0, 0.0);
                    for (v, w) in z.iter().zip(ph) {
                        re += v.re * w.re - v.im * w.im;
                        im += v.re * w.im + v.im * w.re;
                    }
                    out.push((C64::new(re, im), energy));
                }
            }
        }
        out
    }

    /// Replica energy `Σ|r[n]|²` (independent of Doppler).
    pub fn energy(&self, delay: f64) -> f64 {
        let lay = self.layout(delay);
        if lay.start == lay.end {
            return 0.0;
        }
        let base = self.base(lay.phase);
        let m = base.len();
        let mut idx = (lay.start as i64 - lay.shift).rem_euclid(m as i64) as usize;
        let mut e = 0.0;
        for _ in lay.start..lay.end {
            e += base[idx].norm_sqr();
            idx += 1;
            if idx == m {
                idx = 0;
            }
        }
        e
    }

    /// Sample index range `[start, end)` occupied by a replica at `delay`.
    pub fn support(&self, delay: f64) -> (usize, usize) {
        let lay = self.layout(delay);
        (lay.start, lay.end)
    }
}
