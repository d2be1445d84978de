//! Stage II: SAGE refinement of per-path delay, Doppler and gain, and the
//! near-direct path selection rule.
//!
//! Each M-step maximizes `|⟨u_ℓ, r⟩|²/‖r‖²` over a two-level local grid
//! around the current estimate. That objective equals the drop in
//! `‖u_ℓ − α·r‖²` at the LS gain, and the current point is always on the
//! grid, so the total residual never increases from one sweep to the next.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::scene::PathParams;
use crate::waveform::ReplicaBank;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineGrid {
    /// Coarse delay cell Δτ, s.
    pub delay_cell: f64,
    /// Coarse Doppler cell Δf_d, Hz.
    pub doppler_cell: f64,
    /// Search half-width in coarse cells (≥ 1).
    #[serde(default = "one")]
    pub half_width_cells: f64,
    /// Fine step is `cell / factor` (≥ 2).
    #[serde(default = "sixteen")]
    pub factor: usize,
    /// Continuous delay refinement within one fine step of the best grid
    /// point.
    #[serde(default = "yes")]
    pub interpolate: bool,
}

fn one() -> f64 {
    1.0
}

fn sixteen() -> usize {
    16
}

fn yes() -> bool {
    true
}

impl RefineGrid {
    pub fn new(delay_cell: f64, doppler_cell: f64) -> Self {
        Self {
            delay_cell,
            doppler_cell,
            half_width_cells: 1.0,
            factor: 16,
            interpolate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 {
            return Err(Error::Config(format!("refinement factor must be >= 2, got {}", self.factor)));
        }
        if !(self.half_width_cells >= 1.0) {
            return Err(Error::Config("refine half-width must be at least one coarse cell".into()));
        }
        if !(self.delay_cell > 0.0 && self.doppler_cell >= 0.0) {
            return Err(Error::Config("refine cells must be positive".into()));
        }
        Ok(())
    }

    /// Subdivision used by the first search level.
    fn coarse_div(&self) -> usize {
        self.factor.min(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    pub refine: RefineGrid,
    /// Stop when the largest normalized parameter change drops below this.
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    /// Consecutive metric increases treated as divergence.
    #[serde(default = "default_patience")]
    pub divergence_patience: usize,
}

fn default_tol() -> f64 {
    1e-3
}

fn default_sweeps() -> usize {
    20
}

fn default_patience() -> usize {
    3
}

impl SageConfig {
    pub fn new(refine: RefineGrid) -> Self {
        Self {
            refine,
            tolerance: default_tol(),
            max_sweeps: default_sweeps(),
            divergence_patience: default_patience(),
        }
    }
}

/// One row of the per-sweep history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    pub path: usize,
    pub delay: f64,
    pub doppler: f64,
    pub abs_gain: f64,
    /// Total residual energy `‖u − Σ û‖²` after this path's update.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageState {
    pub paths: Vec<PathParams>,
    /// Completed sweeps.
    pub iteration: usize,
    /// Convergence metric of the last sweep.
    pub metric: f64,
    pub converged: bool,
    pub diverged: bool,
    /// Some M-step maximum stayed on the edge of its widened search grid.
    pub non_interior: bool,
    /// `‖u − Σ û‖²` after each sweep, starting with the initial state.
    pub residual_history: Vec<f64>,
    pub history: Vec<SweepRecord>,
}

impl SageState {
    /// Writes `sweep,path,tau_s,doppler_hz,abs_alpha,residual`.
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep", "path", "tau_s", "doppler_hz", "abs_alpha", "residual"])?;
        for r in &self.history {
            w.write_record([
                r.sweep.to_string(),
                r.path.to_string(),
                r.delay.to_string(),
                r.doppler.to_string(),
                r.abs_gain.to_string(),
                r.residual.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Purified signal `u − Σ_{x≠ℓ} α_x·s(t − τ_x)·exp(j2πf_x t)`.
pub fn sage_e_step(u: &[C64], paths: &[PathParams], l: usize, bank: &ReplicaBank) -> Vec<C64> {
    let mut out = u.to_vec();
    for (x, p) in paths.iter().enumerate() {
        if x != l && p.gain.norm_sqr() > 0.0 {
            bank.accumulate(&mut out, -p.gain, p.delay.max(0.0), p.doppler);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepResult {
    pub path: PathParams,
    /// `|⟨u_ℓ, r⟩|²/‖r‖²` at the returned point.
    pub objective: f64,
    pub non_interior: bool,
}

fn axis(center: f64, step: f64, half: usize, floor: Option<f64>) -> Vec<f64> {
    let n = half as i64;
    (-n..=n)
        .map(|k| center + k as f64 * step)
        .filter(|&v| floor.is_none_or(|f| v >= f))
        .collect()
}

/// Best `(delay, doppler, objective, correlation, energy)` over a grid.
fn search(u: &[C64], bank: &ReplicaBank, delays: &[f64], dopplers: &[f64]) -> (usize, usize, f64, C64, f64) {
    let vals = bank.correlate_grid(u, delays, dopplers);
    let mut best = (0, 0, f64::NEG_INFINITY, C64::new(0.0, 0.0), 0.0);
    for (k, &(c, e)) in vals.iter().enumerate() {
        let obj = if e > 0.0 { c.norm_sqr() / e } else { 0.0 };
        if obj > best.2 {
            best = (k / dopplers.len(), k % dopplers.len(), obj, c, e);
        }
    }
    best
}

fn objective_at(u: &[C64], bank: &ReplicaBank, delay: f64, doppler: f64) -> (f64, C64, f64) {
    let (c, e) = bank.correlate(u, delay, doppler);
    let obj = if e > 0.0 { c.norm_sqr() / e } else { 0.0 };
    (obj, c, e)
}

/// Maximizes `f` on `[a, b]` from the interior point `x` (with `f(x) = fx`)
/// by Brent's method: parabolic steps through the three best points, golden
/// section when a step is not acceptable.
fn brent_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, x: f64, fx: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105;
    let (mut x, mut w, mut v) = (x, x, x);
    let (mut fx, mut fw, mut fv) = (-fx, -fx, -fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let mut p = (x - v) * q0 - (x - w) * r;
            let mut q = 2.0 * (q0 - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = -f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, -fx)
}

/// Local ML update of one path from its purified signal.
pub fn sage_m_step(u_l: &[C64], grid: &RefineGrid, current: &PathParams, bank: &ReplicaBank) -> MStepResult {
    let div = grid.coarse_div();
    let step1_t = grid.delay_cell / div as f64;
    let step1_f = grid.doppler_cell / div as f64;
    let search_doppler = grid.doppler_cell > 0.0;
    let tau0 = current.delay.max(0.0);

    let mut non_interior = false;
    let mut half = (grid.half_width_cells * div as f64).round() as usize;
    let mut level1 = None;
    for attempt in 0..2 {
        let delays = axis(tau0, step1_t, half, Some(0.0));
        let dopplers = if search_doppler {
            axis(current.doppler, step1_f, half, None)
        } else {
            vec![current.doppler]
        };
        let (i, j, obj, _, _) = search(u_l, bank, &delays, &dopplers);
        let edge_t = (delays[i] - tau0).abs() >= half as f64 * step1_t * (1.0 - 1e-9);
        let edge_f = search_doppler && (j == 0 || j == dopplers.len() - 1);
        level1 = Some((delays[i], dopplers[j], obj));
        if !(edge_t || edge_f) {
            break;
        }
        if attempt == 1 {
            non_interior = true;
        }
        half *= 2;
    }
    let (t1, f1, _) = level1.expect("at least one search level ran");

    let fine_half = grid.factor / div;
    let step2_t = grid.delay_cell / grid.factor as f64;
    let step2_f = grid.doppler_cell / grid.factor as f64;
    let delays = axis(t1, step2_t, fine_half, Some(0.0));
    let dopplers = if search_doppler {
        axis(f1, step2_f, fine_half, None)
    } else {
        vec![f1]
    };
    let (i, j, mut obj, mut corr, mut energy) = search(u_l, bank, &delays, &dopplers);
    let mut tau = delays[i];
    let fd = dopplers[j];

    if grid.interpolate {
        let lo = (tau - step2_t).max(0.0);
        let (x, jx) = brent_max(|t| objective_at(u_l, bank, t, fd).0, lo, tau + step2_t, tau, obj, step2_t * 1e-4);
        if jx > obj {
            let (jc, c, e) = objective_at(u_l, bank, x, fd);
            tau = x;
            obj = jc;
            corr = c;
            energy = e;
        }
    }

    let gain = if energy > 0.0 { corr / energy } else { C64::new(0.0, 0.0) };
    MStepResult {
        path: PathParams::new(gain, tau, fd),
        objective: obj,
        non_interior,
    }
}

fn residual_energy(u: &[C64], model: &[C64]) -> f64 {
    u.iter().zip(model).map(|(a, b)| (a - b).norm_sqr()).sum()
}

fn reconstruct(paths: &[PathParams], bank: &ReplicaBank) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); bank.n_samples()];
    for p in paths {
        bank.accumulate(&mut y, p.gain, p.delay.max(0.0), p.doppler);
    }
    y
}

fn change(a: &PathParams, b: &PathParams, grid: &RefineGrid) -> f64 {
    let dt = (a.delay - b.delay).abs() / grid.delay_cell;
    let df = if grid.doppler_cell > 0.0 {
        (a.doppler - b.doppler).abs() / grid.doppler_cell
    } else {
        0.0
    };
    let scale = a.gain.norm().max(b.gain.norm());
    let da = if scale > 0.0 { (a.gain - b.gain).norm() / scale } else { 0.0 };
    dt + df + da
}

/// Alternating E/M sweeps over all paths until the parameters settle.
pub fn sage_iterate(u: &[C64], init: &[PathParams], cfg: &SageConfig, bank: &ReplicaBank) -> Result<SageState> {
    cfg.refine.validate()?;
    if init.is_empty() {
        return Err(Error::Argument("SAGE needs at least one initial path".into()));
    }
    if u.len() != bank.n_samples() {
        return Err(Error::Dimension(format!(
            "observation has {} samples, replicas have {}",
            u.len(),
            bank.n_samples()
        )));
    }
    let mut order: Vec<usize> = (0..init.len()).collect();
    order.sort_by(|&a, &b| init[b].gain.norm().total_cmp(&init[a].gain.norm()).then(a.cmp(&b)));

    let mut paths: Vec<PathParams> = init
        .iter()
        .map(|p| PathParams {
            delay: p.delay.max(0.0),
            ..*p
        })
        .collect();
    let mut model = reconstruct(&paths, bank);
    let mut state = SageState {
        paths: paths.clone(),
        iteration: 0,
        metric: f64::INFINITY,
        converged: false,
        diverged: false,
        non_interior: false,
        residual_history: vec![residual_energy(u, &model)],
        history: Vec::new(),
    };
    let mut best = (state.residual_history[0], paths.clone());
    let mut rising = 0usize;
    let mut last_metric = f64::INFINITY;

    for sweep in 1..=cfg.max_sweeps {
        let mut metric: f64 = 0.0;
        for &l in &order {
            let old = paths[l];
            let mut u_l: Vec<C64> = u.iter().zip(&model).map(|(a, b)| a - b).collect();
            bank.accumulate(&mut u_l, old.gain, old.delay, old.doppler);
            let upd = sage_m_step(&u_l, &cfg.refine, &old, bank);
            state.non_interior |= upd.non_interior;
            bank.accumulate(&mut model, -old.gain, old.delay, old.doppler);
            bank.accumulate(&mut model, upd.path.gain, upd.path.delay, upd.path.doppler);
            paths[l] = upd.path;
            metric = metric.max(change(&old, &upd.path, &cfg.refine));
            state.history.push(SweepRecord {
                sweep,
                path: l,
                delay: upd.path.delay,
                doppler: upd.path.doppler,
                abs_gain: upd.path.gain.norm(),
                residual: residual_energy(u, &model),
            });
        }
        // rebuild to keep accumulated rounding out of the next sweep
        model = reconstruct(&paths, bank);
        let res = residual_energy(u, &model);
        state.residual_history.push(res);
        state.iteration = sweep;
        state.metric = metric;
        if res < best.0 {
            best = (res, paths.clone());
        }
        if metric < cfg.tolerance {
            state.converged = true;
            break;
        }
        rising = if metric > last_metric { rising + 1 } else { 0 };
        last_metric = metric;
        if rising >= cfg.divergence_patience {
            state.diverged = true;
            paths = best.1.clone();
            break;
        }
    }
    state.paths = paths;
    Ok(state)
}

/// Index of the near-direct path: among paths with `τ ≤ factor·τ_min`, the
/// one with the largest `|α|`, ties going to the smaller delay.
pub fn select_direct_index(paths: &[PathParams], threshold_factor: f64) -> Option<usize> {
    let tau_min = paths.iter().map(|p| p.delay).fold(f64::INFINITY, f64::min);
    if !tau_min.is_finite() {
        return None;
    }
    let limit = threshold_factor * tau_min;
    let mut best: Option<usize> = None;
    for (i, p) in paths.iter().enumerate() {
        if p.delay > limit {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (gb, gi) = (paths[b].gain.norm(), p.gain.norm());
                if gi > gb || (gi == gb && p.delay < paths[b].delay) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

pub fn select_direct_path(state: &SageState, threshold_factor: f64) -> Option<PathParams> {
    select_direct_index(&state.paths, threshold_factor).map(|i| state.paths[i])
}
