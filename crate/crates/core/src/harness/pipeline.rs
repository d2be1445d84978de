//! Per-pulse path estimation over an echo cube.
//!
//! Each pulse yields a candidate atom list (OMP support, or the strongest
//! correlation cells for the SAGE-only baseline). Atoms within one delay cell
//! of a stronger atom on the same pulse are merged away. Delay cells that a
//! majority of pulses agree on (within one cell) become the path set every
//! pulse's SAGE run starts from. Weak refined paths are pruned; the two-stage
//! estimator then selects the near-direct path, the baseline the strongest.

use crate::omp::{omp_run, DelayDopplerGrid, Dictionary, OmpConfig, SparseEstimate};
use crate::sage::{sage_iterate, select_direct_index, RefineGrid, SageConfig, SageState};
use crate::scene::{EchoCube, PathParams};
use crate::waveform::ReplicaBank;
use crate::{Error, Result, C64};

use super::{EstimatorSpec, Method};

/// Consensus cells closer than this (in delay cells) are treated as one path.
const CONSENSUS_RADIUS: usize = 2;

/// Everything an estimator needs besides the observation.
pub struct Estimator<'a> {
    pub bank: &'a ReplicaBank,
    pub dict: &'a Dictionary,
    pub spec: &'a EstimatorSpec,
    /// Noise variance per sample, from the noise-only calibration.
    pub noise_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseResult {
    /// Stage I output (OMP only).
    pub omp: Option<SparseEstimate>,
    /// Atoms surviving the per-pulse merge: `(delay cell, atom index, replica gain)`.
    pub atoms: Vec<(usize, usize, C64)>,
    pub init: Vec<PathParams>,
    pub sage: Option<SageState>,
    /// Refined paths after pruning.
    pub paths: Vec<PathParams>,
    pub selected: Option<PathParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeEstimate {
    pub method: Method,
    /// Delay cells shared by the majority of pulses.
    pub consensus: Vec<usize>,
    pub pulses: Vec<PulseResult>,
}

impl CubeEstimate {
    pub fn regularized(&self) -> usize {
        self.pulses
            .iter()
            .filter(|p| p.omp.as_ref().is_some_and(|o| o.regularized))
            .count()
    }

    pub fn non_converged(&self) -> usize {
        self.pulses
            .iter()
            .filter(|p| p.sage.as_ref().is_some_and(|s| !s.converged))
            .count()
    }

    pub fn non_interior(&self) -> usize {
        self.pulses
            .iter()
            .filter(|p| p.sage.as_ref().is_some_and(|s| s.non_interior))
            .count()
    }

    pub fn empty_pulses(&self) -> usize {
        self.pulses.iter().filter(|p| p.selected.is_none()).count()
    }
}

impl Estimator<'_> {
    fn omp_config(&self) -> OmpConfig {
        OmpConfig {
            max_iter: OmpConfig::default_max_iter(self.spec.expected_paths),
            noise_power: self.noise_power,
            stopping: self.spec.stopping,
        }
    }

    fn sage_config(&self) -> SageConfig {
        let g = self.dict.grid();
        let mut refine = RefineGrid::new(g.delay_step, if g.num_dopplers > 1 { g.doppler_step } else { 0.0 });
        refine.factor = self.spec.refine_factor;
        SageConfig {
            tolerance: self.spec.tolerance,
            max_sweeps: self.spec.max_sweeps,
            ..SageConfig::new(refine)
        }
    }

    /// Candidate atoms for one pulse, strongest first: `(atom, |x|, replica gain)`.
    fn candidates(&self, method: Method, u: &[C64]) -> Result<(Option<SparseEstimate>, Vec<(usize, f64, C64)>)> {
        match method {
            Method::OmpSage => {
                let est = omp_run(self.dict, u, &self.omp_config())?;
                let mut c: Vec<(usize, f64, C64)> = est
                    .support
                    .iter()
                    .zip(&est.coefficients)
                    .zip(&est.paths)
                    .map(|((&i, x), p)| (i, x.norm(), p.gain))
                    .collect();
                c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                Ok((Some(est), c))
            }
            Method::SageOnly => {
                let spec = self.dict.correlate(u);
                let mut idx = spectrum_peaks(&spec, self.dict.grid());
                idx.sort_by(|&a, &b| spec[b].norm().total_cmp(&spec[a].norm()).then(a.cmp(&b)));
                idx.truncate(self.spec.expected_paths);
                let c = idx
                    .into_iter()
                    .map(|i| (i, spec[i].norm(), spec[i] / self.dict.replica_norm(i)))
                    .collect();
                Ok((None, c))
            }
            Method::Raw => Err(Error::Argument("raw processing has no estimator".into())),
        }
    }

    fn merge(&self, cands: &[(usize, f64, C64)]) -> Vec<(usize, usize, C64)> {
        let g = self.dict.grid();
        let floor = cands.first().map_or(0.0, |c| c.2.norm()) * 10f64.powf(-self.spec.leakage_db / 20.0);
        let mut kept: Vec<(usize, usize, C64)> = Vec::new();
        for &(i, _, gain) in cands {
            let p = g.cell(i).0;
            if gain.norm() >= floor && kept.iter().all(|k| k.0.abs_diff(p) > 1) {
                kept.push((p, i, gain));
            }
        }
        kept
    }

    fn initial_paths(&self, u: &[C64], consensus: &[usize], atoms: &[(usize, usize, C64)]) -> Vec<PathParams> {
        let g = self.dict.grid();
        consensus
            .iter()
            .map(|&p| {
                let delay = g.delay(p);
                match atoms.iter().find(|a| a.0.abs_diff(p) <= 1) {
                    Some(&(_, i, gain)) => PathParams::new(gain, delay, g.coordinates(i).1),
                    None => {
                        let (c, e) = self.bank.correlate(u, delay, 0.0);
                        let gain = if e > 0.0 { c / e } else { C64::new(0.0, 0.0) };
                        PathParams::new(gain, delay, 0.0)
                    }
                }
            })
            .collect()
    }

    fn refine(
        &self,
        method: Method,
        u: &[C64],
        init: &[PathParams],
    ) -> Result<(SageState, Vec<PathParams>, Option<PathParams>)> {
        let cfg = self.sage_config();
        let cell = self.dict.grid().delay_step;
        let mut state = sage_iterate(u, init, &cfg, self.bank)?;
        // Two paths inside one delay cell are not resolvable: keep the
        // stronger and refine again.
        while let Some(weak) = unresolved(&state.paths, cell) {
            let mut rest = state.paths.clone();
            rest.remove(weak);
            state = sage_iterate(u, &rest, &cfg, self.bank)?;
        }
        let sigma = self.noise_power.sqrt();
        let strength = |p: &PathParams| p.gain.norm() * self.bank.energy(p.delay).sqrt();
        let mut paths: Vec<PathParams> = state
            .paths
            .iter()
            .copied()
            .filter(|p| strength(p) >= self.spec.prune_sigma * sigma)
            .collect();
        if paths.is_empty() {
            if let Some(best) = state.paths.iter().copied().max_by(|a, b| strength(a).total_cmp(&strength(b))) {
                paths.push(best);
            }
        }
        let selected = match method {
            Method::OmpSage => select_direct_index(&paths, self.spec.threshold_factor).map(|i| paths[i]),
            _ => paths.iter().copied().max_by(|a, b| strength(a).total_cmp(&strength(b))),
        };
        Ok((state, paths, selected))
    }
}

/// Local maxima of the correlation magnitude over the 3×3 delay-Doppler
/// neighbourhood.
fn spectrum_peaks(spec: &[C64], g: &DelayDopplerGrid) -> Vec<usize> {
    let mag = |p: usize, q: usize| spec[g.index(p, q)].norm();
    let mut out = Vec::new();
    for p in 0..g.num_delays {
        for q in 0..g.num_dopplers {
            let m = mag(p, q);
            let mut peak = m > 0.0;
            for pp in p.saturating_sub(1)..=(p + 1).min(g.num_delays - 1) {
                for qq in q.saturating_sub(1)..=(q + 1).min(g.num_dopplers - 1) {
                    if (pp, qq) != (p, q) && mag(pp, qq) > m {
                        peak = false;
                    }
                }
            }
            if peak {
                out.push(g.index(p, q));
            }
        }
    }
    out
}

/// Index of the weaker member of the closest pair of paths less than `cell`
/// apart in delay.
fn unresolved(paths: &[PathParams], cell: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            let d = (paths[i].delay - paths[j].delay).abs();
            if d < cell && best.is_none_or(|b| d < b.0) {
                let weak = if paths[i].gain.norm() < paths[j].gain.norm() { i } else { j };
                best = Some((d, weak));
            }
        }
    }
    best.map(|b| b.1)
}

/// Runs the two-stage estimator (or the SAGE-only baseline) on every pulse.
pub fn estimate_cube(cube: &EchoCube, method: Method, est: &Estimator<'_>) -> Result<CubeEstimate> {
    if cube.n_samples() != est.dict.n_samples() {
        return Err(Error::Dimension(format!(
            "cube has {} fast-time samples, dictionary atoms have {}",
            cube.n_samples(),
            est.dict.n_samples()
        )));
    }
    let na = cube.num_pulses();
    let num_delays = est.dict.grid().num_delays;
    let mut pulses = Vec::with_capacity(na);
    let mut votes = vec![0usize; num_delays];
    for i in 0..na {
        let (omp, cands) = est.candidates(method, cube.pulse(i))?;
        let atoms = est.merge(&cands);
        let mut marked = vec![false; num_delays];
        for a in &atoms {
            for p in a.0.saturating_sub(1)..=(a.0 + 1).min(num_delays - 1) {
                marked[p] = true;
            }
        }
        for (v, m) in votes.iter_mut().zip(&marked) {
            *v += *m as usize;
        }
        pulses.push(PulseResult {
            omp,
            atoms,
            init: Vec::new(),
            sage: None,
            paths: Vec::new(),
            selected: None,
        });
    }

    let mut ranked: Vec<usize> = (0..num_delays).filter(|&p| 2 * votes[p] > na).collect();
    ranked.sort_by(|&a, &b| votes[b].cmp(&votes[a]).then(a.cmp(&b)));
    let mut consensus: Vec<usize> = Vec::new();
    for p in ranked {
        if consensus.iter().all(|&c| c.abs_diff(p) > CONSENSUS_RADIUS) {
            consensus.push(p);
        }
    }
    consensus.truncate(OmpConfig::default_max_iter(est.spec.expected_paths));
    consensus.sort_unstable();

    if !consensus.is_empty() {
        for (i, pr) in pulses.iter_mut().enumerate() {
            let u = cube.pulse(i);
            pr.init = est.initial_paths(u, &consensus, &pr.atoms);
            let (state, paths, selected) = est.refine(method, u, &pr.init)?;
            pr.sage = Some(state);
            pr.paths = paths;
            pr.selected = selected;
        }
    }
    Ok(CubeEstimate {
        method,
        consensus,
        pulses,
    })
}

/// Echo cube holding only each pulse's selected path,
/// `α̂·s(t − τ̂)·exp(j2π f̂ t)`.
pub fn cleaned_cube(est: &CubeEstimate, template: &EchoCube, bank: &ReplicaBank) -> EchoCube {
    let mut out = template.clone();
    out.samples.fill(C64::new(0.0, 0.0));
    out.noise_power = 0.0;
    for (i, pr) in est.pulses.iter().enumerate() {
        if let Some(p) = pr.selected {
            let mut row = out.samples.row_mut(i);
            let row = row.as_slice_mut().expect("cube rows are contiguous");
            bank.accumulate(row, p.gain, p.delay.max(0.0), p.doppler);
        }
    }
    out
}
