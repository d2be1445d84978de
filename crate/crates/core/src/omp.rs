//! Stage I: on-grid delay-Doppler dictionary and orthogonal matching pursuit.
//!
//! Delays are window-relative (`τ_p = p·Δτ`, `Δτ = 1/B`) and the grid is cut
//! so that every atom's symbol support lies inside the observation. Columns
//! are ordered p-major: atom `i` is `(p, q) = (i / Q, i % Q)`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::scene::PathParams;
use crate::waveform::{OfdmConfig, ReplicaBank};
use crate::{Error, Result, C64};

/// Default dictionary memory budget, bytes.
pub const DEFAULT_DICTIONARY_BUDGET: usize = 512 << 20;

/// Relative residual below which iteration stops regardless of the noise rule.
const RESIDUAL_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDopplerGrid {
    /// Δτ, s.
    pub delay_step: f64,
    /// P.
    pub num_delays: usize,
    /// Δf_d, Hz.
    pub doppler_step: f64,
    /// Q. Bin `q` sits at `(q − ⌊Q/2⌋)·Δf_d`.
    pub num_dopplers: usize,
}

impl DelayDopplerGrid {
    pub fn new(delay_step: f64, num_delays: usize, doppler_step: f64, num_dopplers: usize) -> Result<Self> {
        if num_delays == 0 || num_dopplers == 0 {
            return Err(Error::Config("delay-Doppler grid needs P >= 1 and Q >= 1".into()));
        }
        if !(delay_step > 0.0) || !(doppler_step > 0.0 || num_dopplers == 1) {
            return Err(Error::Config(format!(
                "grid steps must be positive, got {delay_step} s and {doppler_step} Hz"
            )));
        }
        Ok(Self {
            delay_step,
            num_delays,
            doppler_step,
            num_dopplers,
        })
    }

    /// `Δτ = 1/B`, `Δf_d = 1/(N_a·T)`, and the largest P whose atoms all fit in
    /// `n_samples`.
    pub fn for_observation(cfg: &OfdmConfig, num_pulses: usize, n_samples: usize, num_dopplers: usize) -> Result<Self> {
        let len = cfg.symbol_samples();
        let os = cfg.oversampling();
        if n_samples < len {
            return Err(Error::Dimension(format!(
                "observation of {n_samples} samples is shorter than one symbol ({len})"
            )));
        }
        let p = (n_samples - len) / os + 1;
        Self::new(
            1.0 / cfg.bandwidth(),
            p,
            1.0 / (num_pulses.max(1) as f64 * cfg.symbol_duration()),
            num_dopplers,
        )
    }

    pub fn size(&self) -> usize {
        self.num_delays * self.num_dopplers
    }

    pub fn delay(&self, p: usize) -> f64 {
        p as f64 * self.delay_step
    }

    pub fn doppler(&self, q: usize) -> f64 {
        (q as f64 - (self.num_dopplers / 2) as f64) * self.doppler_step
    }

    pub fn index(&self, p: usize, q: usize) -> usize {
        p * self.num_dopplers + q
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.num_dopplers, index % self.num_dopplers)
    }

    pub fn coordinates(&self, index: usize) -> (f64, f64) {
        let (p, q) = self.cell(index);
        (self.delay(p), self.doppler(q))
    }
}

/// Frequency-domain cross-correlator used when every atom is an integer
/// sample shift of the zero-delay replica.
struct FftCorrelator {
    len: usize,
    shift: usize,
    /// `conj(FFT(s0))`, zero-padded to `len`.
    reference: Vec<C64>,
    /// Per Doppler bin, `exp(−j2π f_q t_n)`.
    derotate: Vec<Vec<C64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Unit-norm replica columns, stored column-major.
pub struct Dictionary {
    grid: DelayDopplerGrid,
    n_samples: usize,
    atoms: Vec<C64>,
    /// Replica norm before normalization, per column.
    norms: Vec<f64>,
    fast: Option<FftCorrelator>,
}

impl std::fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dictionary")
            .field("grid", &self.grid)
            .field("n_samples", &self.n_samples)
            .field("fft_correlator", &self.fast.is_some())
            .finish()
    }
}

/// Bytes needed for a dictionary of this size.
pub fn dictionary_bytes(grid: &DelayDopplerGrid, n_samples: usize) -> usize {
    grid.size()
        .saturating_mul(n_samples)
        .saturating_mul(std::mem::size_of::<C64>())
}

/// Column `(p, q)` is `replica(τ_p, f_q) / ‖replica(τ_p, f_q)‖` on the bank's grid.
pub fn build_dictionary(bank: &ReplicaBank, grid: &DelayDopplerGrid, budget: usize) -> Result<Dictionary> {
    let n = bank.n_samples();
    let required = dictionary_bytes(grid, n);
    if required > budget {
        return Err(Error::ResourceBudget { required, budget });
    }
    let cfg = bank.config();
    let dt = bank.dt();
    let last = grid.delay(grid.num_delays - 1);
    let span = cfg.symbol_duration() + cfg.cp_duration;
    if last + span > n as f64 * dt * (1.0 + 1e-12) {
        return Err(Error::Dimension(format!(
            "atom at {last:.6e} s does not fit in {n} samples"
        )));
    }

    let mut atoms = Vec::with_capacity(grid.size() * n);
    let mut norms = Vec::with_capacity(grid.size());
    for p in 0..grid.num_delays {
        for q in 0..grid.num_dopplers {
            let mut col = bank.replica(grid.delay(p), grid.doppler(q));
            let norm = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Dimension(format!("atom ({p}, {q}) is identically zero")));
            }
            col.iter_mut().for_each(|v| *v /= norm);
            atoms.extend_from_slice(&col);
            norms.push(norm);
        }
    }

    let step = grid.delay_step / dt;
    let fast = if (step - step.round()).abs() < 1e-9 && step.round() >= 1.0 {
        Some(FftCorrelator::new(bank, grid, step.round() as usize, norms[0]))
    } else {
        None
    };
    Ok(Dictionary {
        grid: *grid,
        n_samples: n,
        atoms,
        norms,
        fast,
    })
}

/// Smallest `m ≥ n` whose only prime factors are 2, 3 and 5.
fn smooth_len(n: usize) -> usize {
    (n.max(1)..)
        .find(|&m| {
            let mut k = m;
            for p in [2, 3, 5] {
                while k % p == 0 {
                    k /= p;
                }
            }
            k == 1
        })
        .expect("smooth numbers are unbounded")
}

impl FftCorrelator {
    fn new(bank: &ReplicaBank, grid: &DelayDopplerGrid, shift: usize, norm: f64) -> Self {
        let n = bank.n_samples();
        // lags 0..P reach at most n − 1, so a length-n circular correlation
        // never wraps onto them
        let len = smooth_len(n);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let s0 = bank.replica(0.0, 0.0);
        let mut reference = vec![C64::new(0.0, 0.0); len];
        for (r, s) in reference.iter_mut().zip(&s0) {
            *r = s / norm;
        }
        fwd.process(&mut reference);
        reference.iter_mut().for_each(|v| *v = v.conj() / len as f64);
        let dt = bank.dt();
        let derotate = (0..grid.num_dopplers)
            .map(|q| {
                let f = grid.doppler(q);
                (0..n)
                    .map(|k| C64::from_polar(1.0, -2.0 * PI * f * k as f64 * dt))
                    .collect()
            })
            .collect();
        Self {
            len,
            shift,
            reference,
            derotate,
            fwd,
            inv,
        }
    }
}

impl Dictionary {
    pub fn grid(&self) -> &DelayDopplerGrid {
        &self.grid
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[C64] {
        &self.atoms[i * self.n_samples..(i + 1) * self.n_samples]
    }

    /// Norm of the unnormalized replica behind column `i`.
    pub fn replica_norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// `Φᴴr` by explicit inner products.
    pub fn correlate_direct(&self, r: &[C64]) -> Vec<C64> {
        (0..self.len())
            .map(|i| self.atom(i).iter().zip(r).map(|(a, x)| a.conj() * x).sum())
            .collect()
    }

    /// `Φᴴr`, through FFT cross-correlation when the grid allows it.
    pub fn correlate(&self, r: &[C64]) -> Vec<C64> {
        let Some(fast) = &self.fast else {
            return self.correlate_direct(r);
        };
        let g = &self.grid;
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        let mut buf = vec![C64::new(0.0, 0.0); fast.len];
        for q in 0..g.num_dopplers {
            buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for ((b, x), d) in buf.iter_mut().zip(r).zip(&fast.derotate[q]) {
                *b = x * d;
            }
            fast.fwd.process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&fast.reference) {
                *b *= s;
            }
            fast.inv.process(&mut buf);
            for p in 0..g.num_delays {
                out[g.index(p, q)] = buf[p * fast.shift];
            }
        }
        out
    }

    /// Whether [`Dictionary::correlate`] takes the FFT path.
    pub fn has_fft_correlator(&self) -> bool {
        self.fast.is_some()
    }

    /// Column inner product `⟨Φ_i, Φ_j⟩ = Φ_iᴴΦ_j`.
    pub fn inner(&self, i: usize, j: usize) -> C64 {
        self.atom(i).iter().zip(self.atom(j)).map(|(a, b)| a.conj() * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// `‖r‖²/‖u‖² < σ²·N_t/‖u‖²`: residual at the expected noise energy.
    #[default]
    NoiseEnergy,
    /// `‖r‖²/‖u‖² < σ²/‖u‖²`, the single-sample form.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpConfig {
    pub max_iter: usize,
    /// Noise variance σ² per complex sample.
    pub noise_power: f64,
    #[serde(default)]
    pub stopping: StoppingRule,
}

impl OmpConfig {
    /// `2·expected_paths`, capped at 32.
    pub fn default_max_iter(expected_paths: usize) -> usize {
        (2 * expected_paths).clamp(1, 32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Normalized residual fell below the threshold.
    Threshold,
    MaxIterations,
    /// No unused atom had a non-zero correlation, or the next atom was
    /// linearly dependent on the support.
    Exhausted,
    /// The observation is identically zero.
    EmptyObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    /// Atom indices in selection order.
    pub support: Vec<usize>,
    /// LS coefficients on the unit-norm atoms, aligned with `support`.
    pub coefficients: Vec<C64>,
    /// `‖r^(n)‖²` for `n = 0..=iterations`, starting with `‖u‖²`.
    pub residual_history: Vec<f64>,
    /// `max_{i ∈ S} |⟨Φ_i, r^(n)⟩|` after each LS step.
    pub orthogonality: Vec<f64>,
    /// Replica-domain parameters per support atom: `α = x/‖replica‖`.
    pub paths: Vec<PathParams>,
    /// The LS solve needed diagonal loading.
    pub regularized: bool,
    pub stop: StopReason,
    pub residual: Vec<C64>,
}

impl SparseEstimate {
    pub fn iterations(&self) -> usize {
        self.support.len()
    }

    /// Writes `iteration,atom_index,tau_s,doppler_hz,re_alpha,im_alpha,residual_energy`.
    pub fn write_csv<W: Write>(&self, out: W, grid: &DelayDopplerGrid) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "atom_index",
            "tau_s",
            "doppler_hz",
            "re_alpha",
            "im_alpha",
            "residual_energy",
        ])?;
        for (n, (&i, p)) in self.support.iter().zip(&self.paths).enumerate() {
            let (tau, fd) = grid.coordinates(i);
            w.write_record([
                (n + 1).to_string(),
                i.to_string(),
                tau.to_string(),
                fd.to_string(),
                p.gain.re.to_string(),
                p.gain.im.to_string(),
                self.residual_history[n + 1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Incremental QR of the selected columns (classical Gram-Schmidt with one
/// re-orthogonalization pass).
struct SupportBasis {
    q: Vec<Vec<C64>>,
    /// Upper-triangular R, stored by column.
    r: Vec<Vec<C64>>,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

impl SupportBasis {
    /// Appends a column; returns `false` if it is numerically dependent.
    fn push(&mut self, col: &[C64]) -> bool {
        let mut w = col.to_vec();
        let mut coeffs = vec![C64::new(0.0, 0.0); self.q.len()];
        for _ in 0..2 {
            for (j, qj) in self.q.iter().enumerate() {
                let c = dot(qj, &w);
                coeffs[j] += c;
                w.iter_mut().zip(qj).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nrm = norm_sqr(&w).sqrt();
        if nrm < 1e-10 * norm_sqr(col).sqrt() {
            return false;
        }
        w.iter_mut().for_each(|x| *x /= nrm);
        coeffs.push(C64::new(nrm, 0.0));
        self.q.push(w);
        self.r.push(coeffs);
        true
    }

    /// Removes the new direction from `res` and re-orthogonalizes against all.
    fn project_out(&self, res: &mut [C64]) {
        for _ in 0..2 {
            for qj in &self.q {
                let c = dot(qj, res);
                res.iter_mut().zip(qj).for_each(|(x, y)| *x -= c * y);
            }
        }
    }

    /// Solves `R x = Qᴴu` by back-substitution.
    fn coefficients(&self, u: &[C64]) -> Vec<C64> {
        let k = self.q.len();
        let b: Vec<C64> = self.q.iter().map(|qj| dot(qj, u)).collect();
        let mut x = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut acc = b[i];
            for j in i + 1..k {
                acc -= self.r[j][i] * x[j];
            }
            x[i] = acc / self.r[i][i];
        }
        x
    }
}

/// LS fit on a possibly singular support via loaded normal equations.
fn loaded_least_squares(dict: &Dictionary, support: &[usize], u: &[C64]) -> Vec<C64> {
    let k = support.len();
    let mut gram = DMatrix::<C64>::zeros(k, k);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            gram[(a, b)] = dict.inner(i, j);
        }
    }
    let rhs = nalgebra::DVector::from_iterator(k, support.iter().map(|&i| dot(dict.atom(i), u)));
    let trace: f64 = (0..k).map(|a| gram[(a, a)].re).sum();
    for a in 0..k {
        gram[(a, a)] += C64::new(1e-10 * trace, 0.0);
    }
    match gram.cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => vec![C64::new(0.0, 0.0); k],
    }
}

/// Orthogonal matching pursuit of `u` over `dict`.
pub fn omp_run(dict: &Dictionary, u: &[C64], cfg: &OmpConfig) -> Result<SparseEstimate> {
    if u.len() != dict.n_samples() {
        return Err(Error::Dimension(format!(
            "observation has {} samples, atoms have {}",
            u.len(),
            dict.n_samples()
        )));
    }
    if !(cfg.noise_power >= 0.0) {
        return Err(Error::Argument(format!("noise power must be >= 0, got {}", cfg.noise_power)));
    }
    let u_energy = norm_sqr(u);
    let mut est = SparseEstimate {
        support: Vec::new(),
        coefficients: Vec::new(),
        residual_history: vec![u_energy],
        orthogonality: Vec::new(),
        paths: Vec::new(),
        regularized: false,
        stop: StopReason::MaxIterations,
        residual: u.to_vec(),
    };
    if u_energy == 0.0 {
        est.stop = StopReason::EmptyObservation;
        return Ok(est);
    }
    let n_t = u.len() as f64;
    let threshold = match cfg.stopping {
        StoppingRule::NoiseEnergy => cfg.noise_power * n_t / u_energy,
        StoppingRule::PerSample => cfg.noise_power / u_energy,
    };
    let stop_now = |energy: f64| {
        let eta = energy / u_energy;
        eta < threshold || eta < RESIDUAL_FLOOR
    };
    if stop_now(u_energy) {
        est.stop = StopReason::Threshold;
        return Ok(est);
    }

    let mut selected = vec![false; dict.len()];
    let mut basis = SupportBasis {
        q: Vec::new(),
        r: Vec::new(),
    };
    let max_iter = cfg.max_iter.min(dict.len());
    for _ in 0..max_iter {
        let corr = dict.correlate(&est.residual);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in corr.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let m = c.norm();
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        let Some((idx, _)) = best.filter(|&(_, m)| m > 0.0) else {
            est.stop = StopReason::Exhausted;
            break;
        };
        if !basis.push(dict.atom(idx)) {
            est.support.push(idx);
            est.regularized = true;
            est.coefficients = loaded_least_squares(dict, &est.support, u);
            let mut res = u.to_vec();
            for (&i, x) in est.support.iter().zip(&est.coefficients) {
                res.iter_mut().zip(dict.atom(i)).for_each(|(r, a)| *r -= x * a);
            }
            est.residual_history.push(norm_sqr(&res));
            est.orthogonality.push(orthogonality(dict, &est.support, &res));
            est.residual = res;
            est.stop = StopReason::Exhausted;
            break;
        }
        selected[idx] = true;
        est.support.push(idx);
        basis.project_out(&mut est.residual);
        let energy = norm_sqr(&est.residual);
        est.residual_history.push(energy);
        est.orthogonality.push(orthogonality(dict, &est.support, &est.residual));
        if stop_now(energy) {
            est.stop = StopReason::Threshold;
            break;
        }
    }
    if !est.regularized {
        est.coefficients = basis.coefficients(u);
    }
    est.paths = est
        .support
        .iter()
        .zip(&est.coefficients)
        .map(|(&i, &x)| {
            let (tau, fd) = dict.grid().coordinates(i);
            PathParams::new(x / dict.replica_norm(i), tau, fd)
        })
        .collect();
    Ok(est)
}

fn orthogonality(dict: &Dictionary, support: &[usize], r: &[C64]) -> f64 {
    support
        .iter()
        .map(|&i| dot(dict.atom(i), r).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::ModulationSymbols;

    fn setup(n_samples: usize, q: usize) -> (ReplicaBank, DelayDopplerGrid, Dictionary) {
        let cfg = OfdmConfig::desk();
        let syms = ModulationSymbols::qpsk(cfg.subcarriers, 4);
        let bank = ReplicaBank::new(&cfg, &syms, n_samples, 1).unwrap();
        let grid = DelayDopplerGrid::for_observation(&cfg, 128, n_samples, q).unwrap();
        let dict = build_dictionary(&bank, &grid, DEFAULT_DICTIONARY_BUDGET).unwrap();
        (bank, grid, dict)
    }

    #[test]
    fn grid_layout() {
        let cfg = OfdmConfig::desk();
        let g = DelayDopplerGrid::for_observation(&cfg, 128, 330, 5).unwrap();
        assert_eq!(g.num_delays, 330 - 288 + 1);
        assert!((g.doppler_step - 120e3 / 128.0).abs() < 1e-9);
        assert_eq!(g.doppler(2), 0.0);
        assert_eq!(g.doppler(0), -2.0 * g.doppler_step);
        assert_eq!(g.cell(g.index(7, 3)), (7, 3));
        assert!(DelayDopplerGrid::new(1e-9, 0, 1.0, 1).is_err());
        assert!(DelayDopplerGrid::for_observation(&cfg, 128, 100, 1).is_err());
    }

    #[test]
    fn single_atom_dictionary_is_normalized_replica() {
        let cfg = OfdmConfig::desk();
        let syms = ModulationSymbols::qpsk(cfg.subcarriers, 4);
        let bank = ReplicaBank::new(&cfg, &syms, 288, 1).unwrap();
        let grid = DelayDopplerGrid::new(1.0 / cfg.bandwidth(), 1, 1.0, 1).unwrap();
        let dict = build_dictionary(&bank, &grid, DEFAULT_DICTIONARY_BUDGET).unwrap();
        let s = bank.replica(0.0, 0.0);
        let nrm = norm_sqr(&s).sqrt();
        for (a, b) in dict.atom(0).iter().zip(&s) {
            assert!((a - b / nrm).norm() < 1e-15);
        }
    }

    #[test]
    fn gram_diagonal_and_distinct_columns() {
        let (_, _, dict) = setup(320, 3);
        for i in 0..dict.len() {
            assert!((dict.inner(i, i).re - 1.0).abs() < 1e-12);
            for j in i + 1..dict.len().min(i + 8) {
                assert!(dict.inner(i, j).norm() < 1.0);
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = OfdmConfig::desk();
        let syms = ModulationSymbols::qpsk(cfg.subcarriers, 4);
        let bank = ReplicaBank::new(&cfg, &syms, 320, 1).unwrap();
        let grid = DelayDopplerGrid::for_observation(&cfg, 128, 320, 5).unwrap();
        let err = build_dictionary(&bank, &grid, 1000).unwrap_err();
        assert!(matches!(err, Error::ResourceBudget { budget: 1000, .. }));
        let too_long = DelayDopplerGrid::new(grid.delay_step, grid.num_delays + 1, grid.doppler_step, 1).unwrap();
        assert!(build_dictionary(&bank, &too_long, DEFAULT_DICTIONARY_BUDGET).is_err());
    }

    #[test]
    fn fft_correlator_matches_direct_product() {
        let (bank, _, dict) = setup(340, 5);
        assert!(dict.has_fft_correlator());
        let mut u = bank.replica(13.4 * bank.dt(), 700.0);
        for (k, v) in u.iter_mut().enumerate() {
            *v += C64::new((k as f64 * 0.37).sin(), (k as f64 * 1.1).cos()) * 0.1;
        }
        let a = dict.correlate(&u);
        let b = dict.correlate_direct(&u);
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn one_sparse_exact_recovery() {
        let (_, grid, dict) = setup(320, 3);
        let d = grid.index(11, 2);
        let u = dict.atom(d).to_vec();
        let cfg = OmpConfig {
            max_iter: 4,
            noise_power: 0.0,
            stopping: StoppingRule::NoiseEnergy,
        };
        let est = omp_run(&dict, &u, &cfg).unwrap();
        assert_eq!(est.support, vec![d]);
        assert!((est.coefficients[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(est.residual_history[1] < 1e-18);
        assert_eq!(est.stop, StopReason::Threshold);
        assert_eq!(est.paths[0].delay, grid.delay(11));
        assert_eq!(est.paths[0].doppler, grid.doppler(2));
    }

    #[test]
    fn two_sparse_selects_stronger_first() {
        let (_, grid, dict) = setup(320, 1);
        let a = grid.index(3, 0);
        let b = grid.index(20, 0);
        assert!(dict.inner(a, b).norm() < 0.3);
        let u: Vec<C64> = dict
            .atom(a)
            .iter()
            .zip(dict.atom(b))
            .map(|(x, y)| x + y * 0.5)
            .collect();
        let cfg = OmpConfig {
            max_iter: 5,
            noise_power: 0.0,
            stopping: StoppingRule::NoiseEnergy,
        };
        let est = omp_run(&dict, &u, &cfg).unwrap();
        assert_eq!(est.support, vec![a, b]);
        assert!((est.coefficients[0] - C64::new(1.0, 0.0)).norm() < 1e-6);
        assert!((est.coefficients[1] - C64::new(0.5, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn zero_observation_and_dimension_errors() {
        let (_, _, dict) = setup(300, 1);
        let cfg = OmpConfig {
            max_iter: 3,
            noise_power: 0.0,
            stopping: StoppingRule::NoiseEnergy,
        };
        let est = omp_run(&dict, &vec![C64::new(0.0, 0.0); 300], &cfg).unwrap();
        assert!(est.support.is_empty());
        assert_eq!(est.stop, StopReason::EmptyObservation);
        assert!(omp_run(&dict, &[C64::new(1.0, 0.0)], &cfg).is_err());
    }

    #[test]
    fn noise_only_input_stops_at_zero_iterations() {
        let (_, _, dict) = setup(300, 1);
        let u: Vec<C64> = (0..300).map(|k| C64::from_polar(0.5, k as f64 * 2.1)).collect();
        let cfg = OmpConfig {
            max_iter: 8,
            noise_power: 0.5,
            stopping: StoppingRule::NoiseEnergy,
        };
        let est = omp_run(&dict, &u, &cfg).unwrap();
        assert!(est.support.is_empty());
        let literal = OmpConfig {
            stopping: StoppingRule::PerSample,
            ..cfg
        };
        assert!(!omp_run(&dict, &u, &literal).unwrap().support.is_empty());
    }

    #[test]
    fn default_max_iter_is_capped() {
        assert_eq!(OmpConfig::default_max_iter(4), 8);
        assert_eq!(OmpConfig::default_max_iter(40), 32);
    }

    #[test]
    fn csv_export() {
        let (_, grid, dict) = setup(300, 1);
        let u = dict.atom(5).to_vec();
        let cfg = OmpConfig {
            max_iter: 2,
            noise_power: 0.0,
            stopping: StoppingRule::NoiseEnergy,
        };
        let est = omp_run(&dict, &u, &cfg).unwrap();
        let mut buf = Vec::new();
        est.write_csv(&mut buf, &grid).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("1,5,"));
    }
}
