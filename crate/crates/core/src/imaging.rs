//! SAR image formation and image-quality metrics.
//!
//! Range compression takes the `N·os` samples after the cyclic prefix of each
//! pulse into the subcarrier domain, removes the known symbols and returns to
//! delay. With the normalization used here a unit-gain path at window-relative
//! delay `d` samples produces a peak of exactly 1 at bin `d` (cyclic).
//! Azimuth compression correlates every range row with the hyperbolic phase
//! history of a point at that row's closest-approach range.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::scene::{AntennaPattern, EchoCube, PlatformTrajectory};
use crate::waveform::{ModulationSymbols, OfdmConfig};
use crate::{Error, Result, C64, SPEED_OF_LIGHT};

/// Occupied subcarriers weaker than this are left out of ZF division.
pub const ZF_MIN_MAGNITUDE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    /// Divide by `S_k`.
    #[default]
    ZeroForcing,
    /// Multiply by `conj(S_k)/mean|S_k|²`.
    Matched,
}

/// Range profile of one pulse: `N·os` cyclic delay bins of one sample each.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub bins: Vec<C64>,
    /// Occupied subcarriers dropped by the ZF magnitude guard.
    pub excluded: usize,
}

struct Compressor {
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    weights: Vec<C64>,
    start: usize,
    excluded: usize,
}

impl Compressor {
    fn new(syms: &ModulationSymbols, cfg: &OfdmConfig, mode: Compression) -> Result<Self> {
        if syms.len() != cfg.subcarriers {
            return Err(Error::Dimension(format!(
                "{} symbols for {} subcarriers",
                syms.len(),
                cfg.subcarriers
            )));
        }
        let m = cfg.fft_len();
        let mut planner = FftPlanner::new();
        let mut weights = vec![C64::new(0.0, 0.0); m];
        let mut excluded = 0;
        let mut used = Vec::new();
        for (k, (&s, &occ)) in syms.symbols.iter().zip(&syms.occupied).enumerate() {
            if !occ {
                continue;
            }
            if s.norm() < ZF_MIN_MAGNITUDE {
                excluded += 1;
                continue;
            }
            used.push(k);
        }
        if used.is_empty() {
            return Err(Error::Argument("no usable subcarriers for range compression".into()));
        }
        let scale = (cfg.subcarriers as f64).sqrt() / (used.len() as f64 * m as f64);
        let mean_power = used.iter().map(|&k| syms.symbols[k].norm_sqr()).sum::<f64>() / used.len() as f64;
        for &k in &used {
            let s = syms.symbols[k];
            weights[k] = match mode {
                Compression::ZeroForcing => s.inv() * scale,
                Compression::Matched => s.conj() / mean_power * scale,
            };
        }
        Ok(Self {
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
            weights,
            start: cfg.cp_samples().round() as usize,
            excluded,
        })
    }

    fn run(&self, row: &[C64], out: &mut [C64]) -> Result<()> {
        let m = self.weights.len();
        if row.len() < self.start + m {
            return Err(Error::Dimension(format!(
                "pulse of {} samples is shorter than CP + symbol ({})",
                row.len(),
                self.start + m
            )));
        }
        out.copy_from_slice(&row[self.start..self.start + m]);
        self.fwd.process(out);
        for (z, w) in out.iter_mut().zip(&self.weights) {
            *z *= w;
        }
        self.inv.process(out);
        Ok(())
    }
}

/// Compresses one pulse.
pub fn range_compress(row: &[C64], syms: &ModulationSymbols, cfg: &OfdmConfig, mode: Compression) -> Result<RangeProfile> {
    let c = Compressor::new(syms, cfg, mode)?;
    let mut bins = vec![C64::new(0.0, 0.0); cfg.fft_len()];
    c.run(row, &mut bins)?;
    Ok(RangeProfile {
        bins,
        excluded: c.excluded,
    })
}

/// ZF compression of one pulse.
pub fn range_compress_zf(row: &[C64], syms: &ModulationSymbols, cfg: &OfdmConfig) -> Result<RangeProfile> {
    range_compress(row, syms, cfg, Compression::ZeroForcing)
}

/// Rows kept after range compression: signed cyclic bins `first..first + rows`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeGate {
    pub first: i64,
    pub rows: usize,
}

impl Default for RangeGate {
    fn default() -> Self {
        Self { first: -16, rows: 64 }
    }
}

/// Range-compressed cube restricted to a gate, `rows × pulses`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeCompressed {
    pub data: Array2<C64>,
    /// Absolute two-way delay of row 0, s.
    pub delay_origin: f64,
    pub dt: f64,
    pub excluded: usize,
}

pub fn range_compress_cube(
    cube: &EchoCube,
    syms: &ModulationSymbols,
    cfg: &OfdmConfig,
    mode: Compression,
    gate: RangeGate,
) -> Result<RangeCompressed> {
    let comp = Compressor::new(syms, cfg, mode)?;
    let m = cfg.fft_len();
    if gate.rows == 0 || gate.rows > m {
        return Err(Error::Argument(format!("range gate of {} rows for {m} bins", gate.rows)));
    }
    if cube.fast_time_origin.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Dimension("pulses must share one fast-time origin".into()));
    }
    let mut data = Array2::zeros((gate.rows, cube.num_pulses()));
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for i in 0..cube.num_pulses() {
        comp.run(cube.pulse(i), &mut buf)?;
        for r in 0..gate.rows {
            let b = (gate.first + r as i64).rem_euclid(m as i64) as usize;
            data[[r, i]] = buf[b];
        }
    }
    Ok(RangeCompressed {
        data,
        delay_origin: cube.fast_time_origin.first().copied().unwrap_or(0.0) + gate.first as f64 * cube.dt,
        dt: cube.dt,
        excluded: comp.excluded,
    })
}

/// Focused image, `range rows × azimuth columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    pub pixels: Array2<C64>,
    /// Slant range of row 0, m.
    pub range_origin: f64,
    /// m per row, `c/(2f_s)`.
    pub range_step: f64,
    /// Along-track position of column 0, m.
    pub azimuth_origin: f64,
    /// m per column, `v_p/prf`.
    pub azimuth_step: f64,
}

impl SarImage {
    pub fn range_of(&self, row: f64) -> f64 {
        self.range_origin + row * self.range_step
    }

    pub fn azimuth_of(&self, col: f64) -> f64 {
        self.azimuth_origin + col * self.azimuth_step
    }

    /// Magnitude in dB relative to the brightest pixel.
    pub fn magnitude_db(&self) -> Array2<f64> {
        let peak = self.pixels.iter().map(|v| v.norm()).fold(0.0, f64::max);
        self.pixels.mapv(|v| {
            if peak > 0.0 {
                20.0 * (v.norm() / peak).max(1e-300).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
    }

    /// One line per range row, comma-separated magnitudes.
    pub fn write_magnitude_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.pixels.rows() {
            let line: Vec<String> = row.iter().map(|v| v.norm().to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Time-domain azimuth matched filter, normalized by `1/N_a`.
pub fn azimuth_compress(rc: &RangeCompressed, traj: &PlatformTrajectory, cfg: &OfdmConfig) -> Result<SarImage> {
    let (rows, na) = rc.data.dim();
    if na != traj.num_pulses {
        return Err(Error::Dimension(format!(
            "{na} pulses of range data for a {}-pulse trajectory",
            traj.num_pulses
        )));
    }
    let k4 = 4.0 * PI * cfg.carrier_freq / SPEED_OF_LIGHT;
    let dx = traj.azimuth_spacing();
    let mut pixels = Array2::zeros((rows, na));
    let mut kernel = vec![C64::new(0.0, 0.0); 2 * na - 1];
    for r in 0..rows {
        let r0 = SPEED_OF_LIGHT * (rc.delay_origin + r as f64 * rc.dt) / 2.0;
        for (idx, h) in kernel.iter_mut().enumerate() {
            let lag = idx as f64 - (na - 1) as f64;
            *h = C64::from_polar(1.0, k4 * r0.hypot(lag * dx));
        }
        let line = rc.data.row(r);
        for j in 0..na {
            let mut acc = C64::new(0.0, 0.0);
            for (i, v) in line.iter().enumerate() {
                acc += v * kernel[i + na - 1 - j];
            }
            pixels[[r, j]] = acc / na as f64;
        }
    }
    Ok(SarImage {
        pixels,
        range_origin: SPEED_OF_LIGHT * rc.delay_origin / 2.0,
        range_step: SPEED_OF_LIGHT * rc.dt / 2.0,
        azimuth_origin: traj.position(0),
        azimuth_step: dx,
    })
}

/// Range and azimuth compression in one call.
pub fn form_image(
    cube: &EchoCube,
    syms: &ModulationSymbols,
    cfg: &OfdmConfig,
    traj: &PlatformTrajectory,
    mode: Compression,
    gate: RangeGate,
) -> Result<SarImage> {
    let rc = range_compress_cube(cube, syms, cfg, mode, gate)?;
    azimuth_compress(&rc, traj, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Pixels per range resolution cell.
    pub range_cell_px: f64,
    /// Pixels per azimuth resolution cell.
    pub azimuth_cell_px: f64,
    /// Mainlobe box half-width, cells.
    pub mainlobe_cells: f64,
    /// Analysis window half-width, cells.
    pub window_cells: f64,
    /// Greedy peak exclusion radius, cells.
    pub exclusion_cells: f64,
    /// Minimum peak-to-median power ratio for a valid image, dB.
    pub min_peak_db: f64,
}

impl MetricConfig {
    /// Cells from the waveform bandwidth and the azimuth resolution
    /// `max(λR/(2L_syn), L_a/2)` at `reference_range`.
    pub fn for_geometry(cfg: &OfdmConfig, traj: &PlatformTrajectory, antenna: &AntennaPattern, reference_range: f64) -> Self {
        let synthetic = traj.aperture_length();
        let az_res = (antenna.wavelength * reference_range / (2.0 * synthetic)).max(antenna.aperture / 2.0);
        Self {
            range_cell_px: cfg.oversampling() as f64,
            azimuth_cell_px: az_res / traj.azimuth_spacing(),
            mainlobe_cells: 1.0,
            window_cells: 16.0,
            exclusion_cells: 3.0,
            min_peak_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    /// Refined `(range, azimuth)` of the strongest peak, m.
    pub peak_position: (f64, f64),
    /// All detected peaks, strongest first, m.
    pub peaks: Vec<(f64, f64)>,
    pub rmse: f64,
    pub islr: f64,
    pub peak_to_median_db: f64,
    pub valid: bool,
}

fn sub_pixel_range(mags: &[f64], i: usize) -> f64 {
    let m0 = mags[i];
    if m0 <= 0.0 {
        return 0.0;
    }
    let left = if i > 0 { mags[i - 1] } else { 0.0 };
    let right = if i + 1 < mags.len() { mags[i + 1] } else { 0.0 };
    let (side, sign) = if right >= left { (right, 1.0) } else { (left, -1.0) };
    let r = side / m0;
    (sign * r / (1.0 + r)).clamp(-0.5, 0.5)
}

fn sub_pixel_parabola(mags: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= mags.len() {
        return 0.0;
    }
    let (a, b, c) = (mags[i - 1], mags[i], mags[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

/// Peaks, RMSE against `truth` (`(range, azimuth)` in m) and ISLR of the
/// strongest peak.
pub fn compute_metrics(img: &SarImage, truth: &[(f64, f64)], mc: &MetricConfig) -> Result<ImageMetrics> {
    if truth.is_empty() {
        return Err(Error::Argument("metrics need at least one truth target".into()));
    }
    let (rows, cols) = img.pixels.dim();
    let power = img.pixels.mapv(|v| v.norm_sqr());
    let mags = img.pixels.mapv(|v| v.norm());

    let mut sorted: Vec<f64> = power.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let max = *sorted.last().expect("image is non-empty");
    let peak_to_median_db = if max <= 0.0 {
        f64::NEG_INFINITY
    } else if median <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max / median).log10()
    };
    let valid = peak_to_median_db >= mc.min_peak_db;

    let ex_r = mc.exclusion_cells * mc.range_cell_px;
    let ex_a = mc.exclusion_cells * mc.azimuth_cell_px;
    let mut excluded = Array2::from_elem((rows, cols), false);
    let mut peaks_px = Vec::new();
    for _ in 0..truth.len() {
        let mut best: Option<(usize, usize, f64)> = None;
        for ((r, c), &p) in power.indexed_iter() {
            if !excluded[[r, c]] && best.is_none_or(|b| p > b.2) {
                best = Some((r, c, p));
            }
        }
        let Some((r, c, p)) = best else { break };
        if p <= 0.0 {
            break;
        }
        peaks_px.push((r, c));
        for ((rr, cc), e) in excluded.indexed_iter_mut() {
            if (rr as f64 - r as f64).abs() <= ex_r && (cc as f64 - c as f64).abs() <= ex_a {
                *e = true;
            }
        }
    }
    if peaks_px.is_empty() {
        return Ok(ImageMetrics {
            peak_position: (f64::NAN, f64::NAN),
            peaks: Vec::new(),
            rmse: f64::NAN,
            islr: f64::NAN,
            peak_to_median_db,
            valid: false,
        });
    }

    let peaks: Vec<(f64, f64)> = peaks_px
        .iter()
        .map(|&(r, c)| {
            let col: Vec<f64> = mags.column(c).to_vec();
            let row: Vec<f64> = mags.row(r).to_vec();
            let dr = if mc.range_cell_px <= 1.0 + 1e-12 {
                sub_pixel_range(&col, r)
            } else {
                sub_pixel_parabola(&col, r)
            };
            let da = sub_pixel_parabola(&row, c);
            (img.range_of(r as f64 + dr), img.azimuth_of(c as f64 + da))
        })
        .collect();

    let mse = truth
        .iter()
        .map(|&(tr, ta)| {
            peaks
                .iter()
                .map(|&(pr, pa)| (pr - tr).powi(2) + (pa - ta).powi(2))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / truth.len() as f64;

    let (pr, pc) = peaks_px[0];
    let main_r = mc.mainlobe_cells * mc.range_cell_px;
    let main_a = mc.mainlobe_cells * mc.azimuth_cell_px;
    let win_r = mc.window_cells * mc.range_cell_px;
    let win_a = mc.window_cells * mc.azimuth_cell_px;
    let (mut e_main, mut e_win) = (0.0, 0.0);
    for ((r, c), &p) in power.indexed_iter() {
        let dr = (r as f64 - pr as f64).abs();
        let da = (c as f64 - pc as f64).abs();
        if dr <= win_r && da <= win_a {
            e_win += p;
            if dr <= main_r && da <= main_a {
                e_main += p;
            }
        }
    }
    let islr = 10.0 * ((e_win - e_main).max(0.0) / e_main).log10();

    Ok(ImageMetrics {
        peak_position: peaks[0],
        peaks,
        rmse: mse.sqrt(),
        islr,
        peak_to_median_db,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        effective_paths, render_echo, synthesize_channel, ChannelProfile, FastTimeWindow, GroundTarget,
        PhaseConvention, ScenePaths,
    };
    use crate::waveform::ReplicaBank;

    fn desk_syms(cfg: &OfdmConfig) -> ModulationSymbols {
        ModulationSymbols::qpsk(cfg.subcarriers, 2)
    }

    #[test]
    fn zf_identity_peak_bin_and_phase() {
        let cfg = OfdmConfig::desk();
        let syms = desk_syms(&cfg);
        let bank = ReplicaBank::new(&cfg, &syms, 330, 1).unwrap();
        let fc = cfg.carrier_freq;
        for d in [0usize, 5, 17, 31] {
            let tau_abs = 7.1e-6 + d as f64 * cfg.sample_period();
            let gain = C64::from_polar(1.0, -2.0 * PI * fc * tau_abs);
            let mut row = vec![C64::new(0.0, 0.0); 330];
            bank.accumulate(&mut row, gain, d as f64 * cfg.sample_period(), 0.0);
            let prof = range_compress_zf(&row, &syms, &cfg).unwrap();
            let (imax, vmax) = prof
                .bins
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap();
            assert_eq!(imax, d);
            assert!((vmax - gain).norm() < 1e-9);
            assert_eq!(prof.excluded, 0);
        }
    }

    #[test]
    fn zf_equals_matched_for_unit_modulus() {
        let cfg = OfdmConfig::desk();
        let syms = desk_syms(&cfg);
        let bank = ReplicaBank::new(&cfg, &syms, 330, 16).unwrap();
        let mut row = vec![C64::new(0.0, 0.0); 330];
        bank.accumulate(&mut row, C64::new(0.3, 0.4), 9.37 * cfg.sample_period(), 300.0);
        bank.accumulate(&mut row, C64::new(-1.0, 0.2), 14.0 * cfg.sample_period(), 0.0);
        let a = range_compress(&row, &syms, &cfg, Compression::ZeroForcing).unwrap();
        let b = range_compress(&row, &syms, &cfg, Compression::Matched).unwrap();
        for (x, y) in a.bins.iter().zip(&b.bins) {
            assert!((x.norm() - y.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn weak_subcarriers_are_excluded() {
        let cfg = OfdmConfig::new(26e9, 8, 120e3, 2, 1).unwrap();
        let mut s = vec![C64::new(1.0, 0.0); 8];
        s[3] = C64::new(1e-9, 0.0);
        let syms = ModulationSymbols::from_symbols(s).unwrap();
        let prof = range_compress_zf(&[C64::new(1.0, 0.0); 12], &syms, &cfg).unwrap();
        assert_eq!(prof.excluded, 1);
        assert!(prof.bins.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        assert!(range_compress_zf(&[C64::new(1.0, 0.0); 5], &syms, &cfg).is_err());
    }

    #[test]
    fn one_bin_separation_gives_two_maxima() {
        let cfg = OfdmConfig::new(26e9, 256, 120e3, 32, 2).unwrap();
        let syms = ModulationSymbols::qpsk(256, 3);
        let n = 700;
        let bank = ReplicaBank::new(&cfg, &syms, n, 1).unwrap();
        let mut row = vec![C64::new(0.0, 0.0); n];
        // one range bin at os = 2 is two samples
        bank.accumulate(&mut row, C64::new(1.0, 0.0), 10.0 * cfg.sample_period(), 0.0);
        bank.accumulate(&mut row, C64::new(1.0, 0.0), 12.0 * cfg.sample_period(), 0.0);
        let prof = range_compress_zf(&row, &syms, &cfg).unwrap();
        let m: Vec<f64> = prof.bins.iter().map(|v| v.norm()).collect();
        let local_max = |i: usize| m[i] > m[i - 1] && m[i] > m[i + 1];
        assert!(local_max(10) && local_max(12));
        assert!(m[11] < m[10]);
    }

    struct Scene {
        cfg: OfdmConfig,
        traj: PlatformTrajectory,
        ant: AntennaPattern,
        syms: ModulationSymbols,
    }

    fn render(sc: &Scene, targets: &[GroundTarget]) -> (EchoCube, Vec<(f64, f64)>) {
        let window = FastTimeWindow::for_scene(&sc.cfg, &sc.traj, targets, 0.0).unwrap();
        let bank = ReplicaBank::new(&sc.cfg, &sc.syms, window.n_samples, 16).unwrap();
        let chans: Vec<_> = targets
            .iter()
            .map(|t| {
                let d = 2.0 * t.closest_range(&sc.traj) / SPEED_OF_LIGHT;
                synthesize_channel(&ChannelProfile::single_path().to_spec(d, 0)).unwrap()
            })
            .collect();
        let paths = ScenePaths::along_track(&sc.cfg, &sc.traj, &sc.ant, targets, &chans, PhaseConvention::Explicit)
            .unwrap();
        let cube = render_echo(&bank, &sc.traj, &sc.ant, targets, &paths, &window, None, 0).unwrap();
        let eff = effective_paths(&sc.cfg, &sc.traj, &sc.ant, targets, &paths, &window, 0);
        assert!(eff.iter().all(|p| p.delay >= 0.0));
        let truth = targets
            .iter()
            .map(|t| (t.closest_range(&sc.traj), t.y))
            .collect();
        (cube, truth)
    }

    fn desk_scene(aperture: f64) -> Scene {
        let cfg = OfdmConfig::desk();
        Scene {
            cfg,
            traj: PlatformTrajectory::desk(),
            ant: AntennaPattern::new(cfg.wavelength(), aperture).unwrap(),
            syms: desk_syms(&cfg),
        }
    }

    #[test]
    fn broadside_point_target_focuses_at_truth() {
        let sc = desk_scene(0.2);
        let targets = [GroundTarget::new(300.0, 0.0)];
        let (cube, truth) = render(&sc, &targets);
        let img = form_image(&cube, &sc.syms, &sc.cfg, &sc.traj, Compression::ZeroForcing, RangeGate::default()).unwrap();
        let mc = MetricConfig::for_geometry(&sc.cfg, &sc.traj, &sc.ant, truth[0].0);
        assert!((mc.azimuth_cell_px - 18.8).abs() < 0.5);
        let m = compute_metrics(&img, &truth, &mc).unwrap();
        assert!(m.valid);
        assert!((m.peak_position.0 - truth[0].0).abs() <= img.range_step);
        assert!((m.peak_position.1 - truth[0].1).abs() <= img.azimuth_step);
        assert!(m.islr.is_finite());
    }

    #[test]
    fn zero_input_gives_zero_image() {
        let sc = desk_scene(0.2);
        let rc = RangeCompressed {
            data: Array2::zeros((8, sc.traj.num_pulses)),
            delay_origin: 7e-6,
            dt: sc.cfg.sample_period(),
            excluded: 0,
        };
        let img = azimuth_compress(&rc, &sc.traj, &sc.cfg).unwrap();
        assert!(img.pixels.iter().all(|v| v.norm() == 0.0));
        let bad = RangeCompressed {
            data: Array2::zeros((8, 3)),
            ..rc
        };
        assert!(azimuth_compress(&bad, &sc.traj, &sc.cfg).is_err());
    }

    #[test]
    fn image_energy_scales_with_rcs_squared() {
        let sc = desk_scene(0.2);
        let energy = |g: f64| {
            let t = [GroundTarget {
                rcs: C64::new(g, 0.0),
                ..GroundTarget::new(300.0, 0.0)
            }];
            let (cube, _) = render(&sc, &t);
            let img = form_image(&cube, &sc.syms, &sc.cfg, &sc.traj, Compression::ZeroForcing, RangeGate::default())
                .unwrap();
            img.pixels.iter().map(|v| v.norm_sqr()).sum::<f64>()
        };
        let (e1, e3) = (energy(1.0), energy(3.0));
        assert!((e3 / e1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn two_azimuth_targets_beyond_half_aperture_resolve() {
        let sc = desk_scene(2.0);
        let sep = 3.0;
        assert!(sep > sc.ant.aperture / 2.0);
        let targets = [GroundTarget::new(300.0, -sep / 2.0), GroundTarget::new(300.0, sep / 2.0)];
        let (cube, truth) = render(&sc, &targets);
        let img = form_image(&cube, &sc.syms, &sc.cfg, &sc.traj, Compression::ZeroForcing, RangeGate::default()).unwrap();
        let mc = MetricConfig::for_geometry(&sc.cfg, &sc.traj, &sc.ant, truth[0].0);
        let m = compute_metrics(&img, &truth, &mc).unwrap();
        assert_eq!(m.peaks.len(), 2);
        let mut az: Vec<f64> = m.peaks.iter().map(|p| p.1).collect();
        az.sort_by(f64::total_cmp);
        assert!((az[0] + sep / 2.0).abs() < 0.5 && (az[1] - sep / 2.0).abs() < 0.5, "{az:?}");
        // a dip between them
        let row = img.pixels.row(((m.peaks[0].0 - img.range_origin) / img.range_step).round() as usize).to_owned();
        let col = |y: f64| ((y - img.azimuth_origin) / img.azimuth_step).round() as usize;
        assert!(row[col(0.0)].norm() < 0.7 * row[col(az[0])].norm());
    }

    fn sinc(x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn sinc_image(px: usize, cells: usize, shift_rows: f64) -> SarImage {
        let n = 2 * cells * px + 1;
        let c = (n / 2) as f64;
        let mut pixels = Array2::zeros((n, n));
        for ((r, col), v) in pixels.indexed_iter_mut() {
            let x = (r as f64 - c - shift_rows) / px as f64;
            let y = (col as f64 - c) / px as f64;
            *v = C64::new(sinc(x) * sinc(y), 0.0);
        }
        SarImage {
            pixels,
            range_origin: 1000.0,
            range_step: 0.5,
            azimuth_origin: -10.0,
            azimuth_step: 0.25,
        }
    }

    #[test]
    fn islr_of_ideal_sinc_matches_quadrature() {
        let px = 8;
        let img = sinc_image(px, 16, 0.0);
        let mc = MetricConfig {
            range_cell_px: px as f64,
            azimuth_cell_px: px as f64,
            mainlobe_cells: 1.0,
            window_cells: 16.0,
            exclusion_cells: 3.0,
            min_peak_db: 10.0,
        };
        let truth = [(img.range_of(128.0), img.azimuth_of(128.0))];
        let m = compute_metrics(&img, &truth, &mc).unwrap();
        let s2 = |x: f64| sinc(x).powi(2);
        let main = simpson(s2, -1.0, 1.0, 2000).powi(2);
        let win = simpson(s2, -16.0, 16.0, 32000).powi(2);
        let want = 10.0 * ((win - main) / main).log10();
        assert!((m.islr - want).abs() < 0.5, "{} vs {want}", m.islr);
        assert_eq!(m.rmse, 0.0);
    }

    #[test]
    fn one_cell_shift_gives_one_cell_rmse() {
        let img = sinc_image(1, 16, 1.0);
        let mc = MetricConfig {
            range_cell_px: 1.0,
            azimuth_cell_px: 1.0,
            mainlobe_cells: 1.0,
            window_cells: 16.0,
            exclusion_cells: 3.0,
            min_peak_db: 10.0,
        };
        let truth = [(img.range_of(16.0), img.azimuth_of(16.0))];
        let m = compute_metrics(&img, &truth, &mc).unwrap();
        assert_eq!(m.rmse, img.range_step);
        assert!(compute_metrics(&img, &[], &mc).is_err());
    }

    #[test]
    fn flat_image_is_invalid() {
        let img = SarImage {
            pixels: Array2::from_elem((10, 10), C64::new(1.0, 0.0)),
            range_origin: 0.0,
            range_step: 1.0,
            azimuth_origin: 0.0,
            azimuth_step: 1.0,
        };
        let mc = MetricConfig {
            range_cell_px: 1.0,
            azimuth_cell_px: 1.0,
            mainlobe_cells: 1.0,
            window_cells: 16.0,
            exclusion_cells: 3.0,
            min_peak_db: 10.0,
        };
        assert!(!compute_metrics(&img, &[(0.0, 0.0)], &mc).unwrap().valid);
        let db = img.magnitude_db();
        assert!(db.iter().all(|&v| v == 0.0));
        let mut csv = Vec::new();
        img.write_magnitude_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
    }
}
