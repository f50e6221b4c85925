//! Exit-time scattering in a finite cavity.
//!
//! An atom starts at `x = 0` between two detectors at `x = ±half_width`.
//! The exit time `T` and the number `m − 1` of momentum reversals before
//! detection are recorded as functions of the detuning and the initial
//! momentum. Both are piecewise smooth with a fractal set of singular
//! points, whose box-counting dimension is estimated here.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{AtomState, SystemParams};
use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::integrator::{roots_in_segment, AtomFlow, CrossingDirection, IntegratorConfig, Solver, StepEnds};

pub const DEFAULT_HALF_WIDTH: f64 = 2.0 * std::f64::consts::PI;
pub const DEFAULT_TAU_CUTOFF: f64 = 1e7;

/// Detector geometry and the time after which an atom counts as trapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    pub half_width: f64,
    pub tau_cutoff: f64,
}

impl Default for CavitySpec {
    fn default() -> Self {
        Self { half_width: DEFAULT_HALF_WIDTH, tau_cutoff: DEFAULT_TAU_CUTOFF }
    }
}

impl CavitySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidParameter { field: "half_width", reason: format!("must be positive, got {}", self.half_width) });
        }
        if !(self.tau_cutoff > 0.0 && self.tau_cutoff.is_finite()) {
            return Err(Error::InvalidParameter { field: "tau_cutoff", reason: format!("must be positive, got {}", self.tau_cutoff) });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitOutcome {
    LeftDetector,
    RightDetector,
    TrappedAtCutoff,
    /// Integration failed; `error` on the record says why.
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitClass {
    RegularExit,
    /// Long-lived, nearly at rest on a potential hump: indistinguishable from
    /// an orbit asymptotic to the unstable equilibrium.
    SeparatrixSuspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub delta: f64,
    pub p0: f64,
    /// Exit time, or the cutoff for trapped atoms.
    pub exit_time: f64,
    /// Momentum sign changes before detection.
    pub m_minus_1: u32,
    pub outcome: ExitOutcome,
    pub classification: ExitClass,
    pub error: Option<String>,
}

impl ExitRecord {
    /// True when `exit_time` is the cutoff rather than a detection.
    pub fn is_censored(&self) -> bool {
        self.outcome == ExitOutcome::TrappedAtCutoff
    }

    fn same_band(&self, other: &Self) -> bool {
        self.m_minus_1 == other.m_minus_1 && self.outcome == other.outcome
    }
}

/// Whether `y[i]` may pass through `level` within the step, from a padded
/// cubic Hermite estimate.
fn may_reach<const N: usize>(ends: &StepEnds<N>, i: usize, level: f64) -> bool {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=4 {
        let v = ends.hermite(i, j as f64 / 4.0);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = 0.25 * (hi - lo) + 1e-9 * (1.0 + level.abs());
    lo - pad <= level && level <= hi + pad
}

/// `|ṗ| = |u sin x| ≤ 1`, so `p` can only vanish within a step of length
/// `h` if it comes within `h` of zero at the Hermite sample points.
fn p_may_vanish(ends: &StepEnds<5>) -> bool {
    let mut any_neg = false;
    let mut any_pos = false;
    let mut min_abs = f64::INFINITY;
    for j in 0..=4 {
        let p = ends.hermite(1, j as f64 / 4.0);
        any_neg |= p < 0.0;
        any_pos |= p > 0.0;
        min_abs = min_abs.min(p.abs());
    }
    (any_neg && any_pos) || min_abs <= ends.h
}

/// Integrates from `s0` until the atom reaches a detector or the cutoff.
pub fn exit_time(s0: &AtomState, params: &SystemParams, cavity: &CavitySpec, cfg: &IntegratorConfig) -> ExitRecord {
    let mut rec = ExitRecord {
        delta: params.delta,
        p0: s0.p,
        exit_time: cavity.tau_cutoff,
        m_minus_1: 0,
        outcome: ExitOutcome::Invalid,
        classification: ExitClass::RegularExit,
        error: None,
    };
    let check = cavity.validate().and_then(|_| {
        if s0.x.abs() >= cavity.half_width {
            Err(Error::InvalidState(format!("x0 = {} is outside the cavity", s0.x)))
        } else {
            Ok(())
        }
    });
    if let Err(e) = check {
        rec.error = Some(e.to_string());
        return rec;
    }
    let flow = AtomFlow::new(*params);
    let mut solver = match Solver::new(&flow, 0.0, s0.to_array(), *cfg) {
        Ok(s) => s,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let hw = cavity.half_width;
    let mut roots = Vec::new();
    while solver.t() < cavity.tau_cutoff {
        if let Err(e) = solver.step(cavity.tau_cutoff) {
            rec.exit_time = solver.t();
            rec.error = Some(e.to_string());
            return rec;
        }
        let ends = *solver.ends();
        let check_right = may_reach(&ends, 0, hw);
        let check_left = may_reach(&ends, 0, -hw);
        let check_p = p_may_vanish(&ends);
        if !(check_right || check_left || check_p) {
            continue;
        }
        let seg = *solver.segment();
        let mut exit: Option<(f64, ExitOutcome)> = None;
        if check_right {
            roots.clear();
            roots_in_segment(&seg, |y: &[f64; 5]| y[0] - hw, CrossingDirection::Up, &mut roots);
            if let Some(r) = roots.first() {
                exit = Some((r.tau, ExitOutcome::RightDetector));
            }
        }
        if check_left {
            roots.clear();
            roots_in_segment(&seg, |y: &[f64; 5]| y[0] + hw, CrossingDirection::Down, &mut roots);
            if let Some(r) = roots.first() {
                if exit.map_or(true, |(t, _)| r.tau < t) {
                    exit = Some((r.tau, ExitOutcome::LeftDetector));
                }
            }
        }
        if check_p {
            roots.clear();
            roots_in_segment(&seg, |y: &[f64; 5]| y[1], CrossingDirection::Any, &mut roots);
            let before = exit.map_or(f64::INFINITY, |(t, _)| t);
            rec.m_minus_1 += roots.iter().filter(|r| r.tau < before).count() as u32;
        }
        if let Some((tau, outcome)) = exit {
            rec.exit_time = tau;
            rec.outcome = outcome;
            return rec;
        }
    }
    rec.outcome = ExitOutcome::TrappedAtCutoff;
    let end = AtomState::from_array(*solver.y());
    let p_scale = 2.0 / params.omega_r.sqrt();
    // On a hump of −u cos x: u cos x < 0.
    if end.p.abs() < 1e-3 * p_scale && end.u * end.x.cos() < 0.0 {
        rec.classification = ExitClass::SeparatrixSuspect;
    }
    rec
}

/// Shared settings of exit-time scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub omega_r: f64,
    pub cavity: CavitySpec,
    pub integrator: IntegratorConfig,
}

fn scan_record(delta: f64, s0: &AtomState, settings: &ScanSettings) -> ExitRecord {
    match SystemParams::new(settings.omega_r, delta) {
        Ok(p) => exit_time(s0, &p, &settings.cavity, &settings.integrator),
        Err(e) => ExitRecord {
            delta,
            p0: s0.p,
            exit_time: 0.0,
            m_minus_1: 0,
            outcome: ExitOutcome::Invalid,
            classification: ExitClass::RegularExit,
            error: Some(e.to_string()),
        },
    }
}

/// `n` evenly spaced values over `[lo, hi]`, both ends included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter { field: "range", reason: format!("need lo < hi and n ≥ 2, got [{lo}, {hi}] × {n}") });
    }
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect())
}

/// Exit records over the detunings `deltas` from a common initial state.
pub fn exit_time_scan<E: Executor>(deltas: &[f64], s0: &AtomState, settings: &ScanSettings, exec: &E) -> Vec<ExitRecord> {
    exec.run(deltas.len(), |i| scan_record(deltas[i], s0, settings))
}

/// Exit records over initial momenta (rows) and detunings (cols).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSurface {
    pub p0: Vec<f64>,
    pub delta: Vec<f64>,
    /// Row-major, `p0.len() × delta.len()`.
    pub records: Vec<ExitRecord>,
}

impl ExitSurface {
    pub fn get(&self, row: usize, col: usize) -> &ExitRecord {
        &self.records[row * self.delta.len() + col]
    }
}

/// `bloch` supplies `(u0, v0, z0)`; every cell starts at `x0 = 0`.
pub fn exit_time_surface<E: Executor>(
    deltas: &[f64],
    p0s: &[f64],
    bloch: [f64; 3],
    settings: &ScanSettings,
    exec: &E,
) -> ExitSurface {
    let ncols = deltas.len();
    let records = exec.run(p0s.len() * ncols, |i| {
        let s0 = AtomState::new_unchecked(0.0, p0s[i / ncols], bloch[0], bloch[1], bloch[2]);
        scan_record(deltas[i % ncols], &s0, settings)
    });
    ExitSurface { p0: p0s.to_vec(), delta: deltas.to_vec(), records }
}

/// Number of adjacent pairs whose `m − 1` or outcome differ.
pub fn count_transitions(records: &[ExitRecord]) -> usize {
    records.windows(2).filter(|w| !w[0].same_band(&w[1])).count()
}

/// Maximal runs of adjacent samples that keep changing band, as
/// `(first Δ, last Δ)` of each run.
pub fn unresolved_intervals(records: &[ExitRecord]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut open = false;
    for w in records.windows(2) {
        if w[0].same_band(&w[1]) {
            open = false;
            continue;
        }
        if open {
            out.last_mut().expect("open run").1 = w[1].delta;
        } else {
            out.push((w[0].delta, w[1].delta));
            open = true;
        }
    }
    out
}

/// Maximal runs of at least `min_len` consecutive samples in one band, as
/// index ranges `start..end`.
pub fn smooth_runs(records: &[ExitRecord], min_len: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || !records[i - 1].same_band(&records[i]) {
            if i - start >= min_len {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub interval: (f64, f64),
    pub zoom: usize,
    pub records: Vec<ExitRecord>,
    /// Band transitions among the original samples inside the interval.
    pub coarse_transitions: usize,
    /// Band transitions in the refined scan.
    pub fine_transitions: usize,
    pub new_transitions: usize,
    pub unresolved: Vec<(f64, f64)>,
    pub max_m_minus_1: u32,
}

/// Rescans `interval` at `zoom` times the resolution the coarse scan had
/// there and reports the structure found.
pub fn self_similarity_probe<E: Executor>(
    coarse: &[ExitRecord],
    interval: (f64, f64),
    zoom: usize,
    s0: &AtomState,
    settings: &ScanSettings,
    exec: &E,
) -> Result<RefinementReport> {
    let (lo, hi) = interval;
    if zoom < 2 || !(lo < hi) {
        return Err(Error::InvalidParameter { field: "zoom", reason: format!("need zoom ≥ 2 and lo < hi, got {zoom} on [{lo}, {hi}]") });
    }
    let inside: Vec<ExitRecord> = coarse.iter().filter(|r| r.delta >= lo && r.delta <= hi).cloned().collect();
    let n = inside.len().max(2);
    let deltas = linspace(lo, hi, zoom * (n - 1) + 1)?;
    let records = exit_time_scan(&deltas, s0, settings, exec);
    let coarse_transitions = count_transitions(&inside);
    let fine_transitions = count_transitions(&records);
    Ok(RefinementReport {
        interval,
        zoom,
        coarse_transitions,
        fine_transitions,
        new_transitions: fine_transitions.saturating_sub(coarse_transitions),
        unresolved: unresolved_intervals(&records),
        max_m_minus_1: records.iter().map(|r| r.m_minus_1).max().unwrap_or(0),
        records,
    })
}

/// Picks the narrowest unresolved interval holding at least two band
/// transitions, padded by one sample on each side.
pub fn pick_unresolved(records: &[ExitRecord]) -> Option<(f64, f64)> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i + 1 < records.len() {
        if records[i].same_band(&records[i + 1]) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < records.len() && !records[i].same_band(&records[i + 1]) {
            i += 1;
        }
        let transitions = i - start;
        if transitions >= 2 && best.map_or(true, |(a, b)| i - start < b - a) {
            best = Some((start, i));
        }
    }
    best.map(|(a, b)| (records[a.saturating_sub(1)].delta, records[(b + 1).min(records.len() - 1)].delta))
}

/// Repeatedly zooms by `zoom` into an unresolved interval of the previous
/// level, `levels` times. Stops early if no unresolved interval is left.
pub fn refinement_cascade<E: Executor>(
    coarse: &[ExitRecord],
    levels: usize,
    zoom: usize,
    s0: &AtomState,
    settings: &ScanSettings,
    exec: &E,
) -> Result<Vec<RefinementReport>> {
    let mut reports: Vec<RefinementReport> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let current = reports.last().map_or(coarse, |r| &r.records[..]);
        let Some(interval) = pick_unresolved(current) else { break };
        let report = self_similarity_probe(current, interval, zoom, s0, settings, exec)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Δ positions where `T(Δ)` is singular at the scan's resolution: midpoints
/// between adjacent samples in different bands, and censored samples.
pub fn singular_set(records: &[ExitRecord]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.is_censored() {
            out.push(r.delta);
        }
        if let Some(next) = records.get(i + 1) {
            if !r.same_band(next) {
                out.push(0.5 * (r.delta + next.delta));
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDimension {
    pub dimension: f64,
    pub r_squared: f64,
    pub stderr: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
    /// `(ε, N(ε))` used in the fit.
    pub counts: Vec<(f64, usize)>,
    /// Poor fit (R² < 0.95) or too little variation in `N`.
    pub degenerate: bool,
}

/// Two-sided 95% quantile of Student's t with `df` degrees of freedom.
fn t_quantile(df: usize) -> f64 {
    if df == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, df as f64).map_or(f64::INFINITY, |t| t.inverse_cdf(0.975))
}

/// Box-counting dimension of a set of points on a line, from the slope of
/// `ln N(ε)` against `ln(1/ε)` over `n_scales` geometric box sizes between
/// `eps_max` and `eps_min`.
pub fn box_counting_dimension(points: &[f64], eps_max: f64, eps_min: f64, n_scales: usize) -> Result<BoxDimension> {
    if points.len() < 100 {
        return Err(Error::domain(format!("box counting needs at least 100 points, got {}", points.len())));
    }
    if !(eps_min > 0.0 && eps_max >= 16.0 * eps_min) || n_scales < 4 {
        return Err(Error::domain("box counting needs at least 4 octaves of scale and 4 scales"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("non-finite point in box counting input"));
    }
    // Nudged left so points on a box edge do not round into the box below.
    let origin = points.iter().copied().fold(f64::INFINITY, f64::min) - 1e-6 * eps_min;
    let ratio = (eps_min / eps_max).powf(1.0 / (n_scales - 1) as f64);
    let mut counts = Vec::with_capacity(n_scales);
    let mut boxes: Vec<i64> = Vec::with_capacity(points.len());
    for k in 0..n_scales {
        let eps = eps_max * ratio.powi(k as i32);
        boxes.clear();
        boxes.extend(points.iter().map(|x| ((x - origin) / eps).floor() as i64));
        boxes.sort_unstable();
        boxes.dedup();
        counts.push((eps, boxes.len()));
    }
    let xs: Vec<f64> = counts.iter().map(|(e, _)| -e.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|(_, n)| (*n as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let sse = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 0.0 };
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    let half = t_quantile(xs.len() - 2) * stderr;
    Ok(BoxDimension {
        dimension: slope,
        r_squared,
        stderr,
        ci: (slope - half, slope + half),
        degenerate: r_squared < 0.95 || syy == 0.0,
        counts,
    })
}

/// Midpoints of the `2^levels` intervals of the middle-thirds Cantor
/// construction after `levels` steps.
pub fn cantor_points(levels: u32) -> Vec<f64> {
    let mut pts: Vec<f64> = vec![0.0];
    let mut scale = 1.0;
    for _ in 0..levels {
        scale /= 3.0;
        let shifted: Vec<f64> = pts.iter().map(|x| x + 2.0 * scale).collect();
        pts.extend(shifted);
    }
    let half = 0.5 * scale;
    let mut pts: Vec<f64> = pts.into_iter().map(|x| x + half).collect();
    pts.sort_by(f64::total_cmp);
    pts
}
