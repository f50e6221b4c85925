//! Poincaré sections at `cos x = 1`.
//!
//! The lattice is `2π`-periodic, so every passage of the unwrapped position
//! through a multiple of `2π` is a return to the same section. At the section
//! the energy fixes `p` in terms of the Bloch vector, and the Bloch norm
//! removes one more coordinate, so each hemisphere `u < 0` / `u > 0` maps
//! one-to-one onto the `(v, z)` disk.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dynamics::{total_energy, AtomState, SystemParams, TangentVector, BLOCH_TOLERANCE};
use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::integrator::{
    lattice_crossing_possible, lattice_crossings_in_segment, AtomFlow, CrossingDirection, IntegratorConfig,
    OdeSystem, Root, Solver, TangentFlow,
};

pub const DEFAULT_MAX_CROSSINGS: usize = 5000;
pub const DEFAULT_FAMILY_SIZE: usize = 200;
/// Initial states must lie on the shell to this energy tolerance.
pub const SHELL_TOLERANCE: f64 = 1e-8;
/// `|u|` at or below this is tagged [`Hemisphere::Boundary`].
pub const BOUNDARY_BAND: f64 = 1e-12;

/// Surface of constant total energy `W`, labelled by the momentum the atom
/// would have where the potential vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyShell {
    pub energy: f64,
    /// `W = (ω_r/2) p_eff²`.
    pub p_eff: f64,
    pub params: SystemParams,
}

impl EnergyShell {
    pub fn from_energy(energy: f64, params: SystemParams) -> Result<Self> {
        if !(energy >= 0.0 && energy.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "energy",
                reason: format!("shell energy must be finite and non-negative, got {energy}"),
            });
        }
        Ok(Self { energy, p_eff: (2.0 * energy / params.omega_r).sqrt(), params })
    }

    pub fn from_momentum(p_eff: f64, params: SystemParams) -> Self {
        let p_eff = p_eff.abs();
        Self { energy: 0.5 * params.omega_r * p_eff * p_eff, p_eff, params }
    }

    /// Non-negative momentum placing `(x0, ·, u, ·, z)` on the shell, if any.
    pub fn momentum_for(&self, x0: f64, u: f64, z: f64) -> Option<f64> {
        let kinetic = self.energy + u * x0.cos() + 0.5 * self.params.delta * z;
        (kinetic >= 0.0).then(|| (2.0 * kinetic / self.params.omega_r).sqrt())
    }

    pub fn energy_error(&self, s: &AtomState) -> f64 {
        (total_energy(s, &self.params) - self.energy).abs()
    }
}

/// Initial states built on a shell, keyed by their position in the seed list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShellFamily {
    pub accepted: Vec<(usize, AtomState)>,
    pub rejected: Vec<(usize, String)>,
}

/// Places each Bloch vector `(u, v, z)` at `x0` with the momentum that puts
/// it on `shell`.
pub fn shell_initial_conditions(shell: &EnergyShell, bloch: &[[f64; 3]], x0: f64) -> ShellFamily {
    let mut family = ShellFamily::default();
    for (i, &[u, v, z]) in bloch.iter().enumerate() {
        let norm = (u * u + v * v + z * z).sqrt();
        if (norm - 1.0).abs() > BLOCH_TOLERANCE {
            family.rejected.push((i, format!("Bloch norm {norm} is not 1")));
            continue;
        }
        match shell.momentum_for(x0, u, z) {
            Some(p) => family.accepted.push((i, AtomState::new_unchecked(x0, p, u, v, z))),
            None => family.rejected.push((i, format!("no real momentum on shell W = {}", shell.energy))),
        }
    }
    family
}

/// Nearly uniform points on the unit sphere along a Fibonacci spiral.
pub fn fibonacci_bloch_family(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            [r * c, r * s, z]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hemisphere {
    West,
    East,
    Boundary,
}

impl Hemisphere {
    pub fn of(u: f64) -> Self {
        if u.abs() <= BOUNDARY_BAND {
            Hemisphere::Boundary
        } else if u < 0.0 {
            Hemisphere::West
        } else {
            Hemisphere::East
        }
    }
}

/// One passage through the section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub trajectory_id: usize,
    pub tau: f64,
    /// Unwrapped position, a multiple of `2π` up to the event tolerance.
    pub x: f64,
    pub p: f64,
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub hemisphere: Hemisphere,
}

impl SectionPoint {
    fn from_root<const N: usize>(trajectory_id: usize, root: &Root<N>) -> Self {
        let y = &root.state;
        Self { trajectory_id, tau: root.tau, x: y[0], p: y[1], u: y[2], v: y[3], z: y[4], hemisphere: Hemisphere::of(y[2]) }
    }

    pub fn state(&self) -> AtomState {
        AtomState::new_unchecked(self.x, self.p, self.u, self.v, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionSettings {
    pub tau_max: f64,
    pub max_crossings: usize,
    pub integrator: IntegratorConfig,
}

impl Default for SectionSettings {
    fn default() -> Self {
        Self { tau_max: 1e7, max_crossings: DEFAULT_MAX_CROSSINGS, integrator: IntegratorConfig::precise() }
    }
}

/// Section points of one trajectory; `error` is set when the integration
/// stopped early, in which case `points` holds everything found before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTrace {
    pub trajectory_id: usize,
    pub points: Vec<SectionPoint>,
    /// Accumulated `ln |δ|` of a unit tangent at each point; empty unless
    /// the trace was run with a tangent.
    pub log_growth: Vec<f64>,
    /// Integration time actually covered.
    pub tau_end: f64,
    /// `ln |δ(tau_end)|` for tangent runs, otherwise 0.
    pub total_log_growth: f64,
    pub error: Option<String>,
}

impl SectionTrace {
    /// Mean growth rate `ln |δ| / τ` over the whole run (tangent runs only).
    pub fn lyapunov(&self) -> f64 {
        if self.tau_end > 0.0 {
            self.total_log_growth / self.tau_end
        } else {
            0.0
        }
    }
}

fn tangent_norm(y: &[f64]) -> f64 {
    y.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Steps `flow` until `tau_max` or `max_crossings`. When `renorm` is given,
/// components `5..N` are a tangent vector renormalized at that interval.
fn run_section<S: OdeSystem<N>, const N: usize>(
    flow: &S,
    id: usize,
    y0: [f64; N],
    settings: &SectionSettings,
    renorm: Option<f64>,
) -> SectionTrace {
    let mut trace = SectionTrace {
        trajectory_id: id,
        points: Vec::new(),
        log_growth: Vec::new(),
        tau_end: 0.0,
        total_log_growth: 0.0,
        error: None,
    };
    let mut solver = match Solver::new(flow, 0.0, y0, settings.integrator) {
        Ok(s) => s,
        Err(e) => {
            trace.error = Some(e.to_string());
            return trace;
        }
    };
    let mut roots = Vec::new();
    let mut acc = 0.0;
    let mut next_renorm = renorm.unwrap_or(f64::INFINITY);
    while solver.t() < settings.tau_max && trace.points.len() < settings.max_crossings {
        if let Err(e) = solver.step(next_renorm.min(settings.tau_max)) {
            trace.error = Some(e.to_string());
            break;
        }
        if lattice_crossing_possible(solver.ends(), TAU) {
            roots.clear();
            lattice_crossings_in_segment(solver.segment(), TAU, CrossingDirection::Any, &mut roots);
            for r in &roots {
                if trace.points.len() == settings.max_crossings {
                    break;
                }
                trace.points.push(SectionPoint::from_root(id, r));
                if renorm.is_some() {
                    trace.log_growth.push(acc + tangent_norm(&r.state[5..]).ln());
                }
            }
        }
        if let Some(interval) = renorm {
            if solver.t() >= next_renorm || solver.t() >= settings.tau_max {
                let mut y = *solver.y();
                let norm = tangent_norm(&y[5..]);
                acc += norm.ln();
                y[5..].iter_mut().for_each(|c| *c /= norm);
                solver.reset_state(y);
                next_renorm += interval;
            }
        }
    }
    trace.tau_end = solver.t();
    if renorm.is_some() {
        trace.total_log_growth = acc + tangent_norm(&solver.y()[5..]).ln();
    }
    trace
}

/// Section points of a single trajectory.
pub fn section_trace(id: usize, s0: &AtomState, params: &SystemParams, settings: &SectionSettings) -> SectionTrace {
    run_section(&AtomFlow::new(*params), id, s0.to_array(), settings, None)
}

/// Section points together with the finite-time growth of a tangent vector,
/// renormalized every `renorm_interval`.
pub fn section_with_growth(
    id: usize,
    s0: &AtomState,
    params: &SystemParams,
    settings: &SectionSettings,
    renorm_interval: f64,
) -> Result<SectionTrace> {
    if !(renorm_interval > 0.0 && renorm_interval.is_finite()) {
        return Err(Error::InvalidParameter { field: "renorm_interval", reason: format!("must be positive, got {renorm_interval}") });
    }
    let y0 = TangentFlow::pack(s0, &TangentVector::diagonal());
    Ok(run_section(&TangentFlow::new(*params), id, y0, settings, Some(renorm_interval)))
}

/// Merged section of an ensemble.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionMap {
    /// Ordered by trajectory id, then τ.
    pub points: Vec<SectionPoint>,
    /// Trajectories whose integration stopped early, with the reason.
    pub truncated: Vec<(usize, String)>,
}

/// Integrates every member of `family` and collects its section points.
pub fn poincare_map<E: Executor>(
    family: &[(usize, AtomState)],
    shell: &EnergyShell,
    settings: &SectionSettings,
    exec: &E,
) -> Result<SectionMap> {
    for (id, s) in family {
        let err = shell.energy_error(s);
        if err > SHELL_TOLERANCE {
            return Err(Error::InvalidState(format!("trajectory {id} is off the shell by {err:e}")));
        }
    }
    let traces = exec.run(family.len(), |i| {
        let (id, s0) = family[i];
        section_trace(id, &s0, &shell.params, settings)
    });
    let mut ordered: Vec<SectionTrace> = traces;
    ordered.sort_by_key(|t| t.trajectory_id);
    let mut map = SectionMap::default();
    for t in ordered {
        if let Some(e) = t.error {
            map.truncated.push((t.trajectory_id, e));
        }
        map.points.extend(t.points);
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plane {
    VzWest,
    VzEast,
    Pz,
}

/// Planar coordinates of the points that belong to `plane`.
pub fn project(points: &[SectionPoint], plane: Plane) -> Vec<[f64; 2]> {
    points
        .iter()
        .filter_map(|pt| match plane {
            Plane::VzWest => (pt.hemisphere == Hemisphere::West).then_some([pt.v, pt.z]),
            Plane::VzEast => (pt.hemisphere == Hemisphere::East).then_some([pt.v, pt.z]),
            Plane::Pz => Some([pt.p, pt.z]),
        })
        .collect()
}

const CURVE_HARMONICS: usize = 6;

/// Thickness of a closed planar curve.
///
/// The points are whitened (shifted to their centroid and scaled by the
/// inverse square root of their covariance) so that ellipses become circles,
/// then the radius `r(θ)` is fitted with a short Fourier series. The result
/// is the RMS fit residual divided by the mean radius: near zero for points
/// on a smooth star-shaped curve, of order 0.1 or more for an area-filling
/// cloud. `None` for too few points or a degenerate cloud.
pub fn radial_dispersion(points: &[[f64; 2]]) -> Option<f64> {
    let m = 2 * CURVE_HARMONICS + 1;
    if points.len() < 3 * m {
        return None;
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx / n;
        sxy += dx * dy / n;
        syy += dy * dy / n;
    }
    // Eigen-decomposition of the 2×2 covariance.
    let half_tr = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let (l1, l2) = (half_tr + disc, half_tr - disc);
    if !(l2 > 1e-30 * l1.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (sa, ca) = angle.sin_cos();
    let polar: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            let a = (ca * dx + sa * dy) / l1.sqrt();
            let b = (-sa * dx + ca * dy) / l2.sqrt();
            (b.atan2(a), a.hypot(b))
        })
        .collect();
    let mean_r = polar.iter().map(|&(_, r)| r).sum::<f64>() / n;
    if !(mean_r > 0.0) {
        return None;
    }
    let basis = |theta: f64| -> Vec<f64> {
        let mut b = Vec::with_capacity(m);
        b.push(1.0);
        for k in 1..=CURVE_HARMONICS {
            let (s, c) = (k as f64 * theta).sin_cos();
            b.push(c);
            b.push(s);
        }
        b
    };
    let mut ata = vec![vec![0.0; m]; m];
    let mut atb = vec![0.0; m];
    for &(theta, r) in &polar {
        let b = basis(theta);
        for i in 0..m {
            atb[i] += b[i] * r;
            for j in 0..m {
                ata[i][j] += b[i] * b[j];
            }
        }
    }
    let coef = solve_dense(ata, atb)?;
    let sse: f64 = polar
        .iter()
        .map(|&(theta, r)| {
            let fit: f64 = basis(theta).iter().zip(&coef).map(|(b, c)| b * c).sum();
            (r - fit).powi(2)
        })
        .sum();
    Some((sse / n).sqrt() / mean_r)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowRegime {
    Regular,
    Chaotic,
    /// Locally regular stretch of a globally chaotic trajectory.
    Sticky,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StickingWindow {
    pub start_tau: f64,
    pub end_tau: f64,
    /// Finite-time growth rate over the window.
    pub lambda: f64,
    pub regime: WindowRegime,
}

/// Splits a tangent-carrying trace into consecutive windows of `window`
/// crossings and tags each by its finite-time growth rate.
///
/// A window is chaotic when its rate exceeds `threshold`. Otherwise it is
/// sticky if the trajectory as a whole exceeds `threshold`, and regular if
/// not.
pub fn sticking_detector(trace: &SectionTrace, window: usize, threshold: f64) -> Result<Vec<StickingWindow>> {
    if window < 2 {
        return Err(Error::InvalidParameter { field: "window", reason: "needs at least 2 crossings".into() });
    }
    if trace.log_growth.len() != trace.points.len() {
        return Err(Error::domain("trace carries no tangent growth"));
    }
    if trace.points.len() < 10 * window {
        return Err(Error::domain(format!(
            "{} crossings are fewer than 10 windows of {window}",
            trace.points.len()
        )));
    }
    let chaotic_overall = trace.lyapunov() > threshold;
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= trace.points.len() {
        let end = start + window - 1;
        let dt = trace.points[end].tau - trace.points[start].tau;
        let lambda = if dt > 0.0 { (trace.log_growth[end] - trace.log_growth[start]) / dt } else { 0.0 };
        let regime = if lambda > threshold {
            WindowRegime::Chaotic
        } else if chaotic_overall {
            WindowRegime::Sticky
        } else {
            WindowRegime::Regular
        };
        out.push(StickingWindow { start_tau: trace.points[start].tau, end_tau: trace.points[end].tau, lambda, regime });
        start += window;
    }
    Ok(out)
}

/// Maximal runs of consecutive sticky windows, as `(start τ, end τ)`.
pub fn sticky_intervals(windows: &[StickingWindow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut prev_sticky = false;
    for w in windows {
        let sticky = w.regime == WindowRegime::Sticky;
        if sticky {
            match out.last_mut() {
                Some(last) if prev_sticky => last.1 = w.end_tau,
                _ => out.push((w.start_tau, w.end_tau)),
            }
        }
        prev_sticky = sticky;
    }
    out
}
