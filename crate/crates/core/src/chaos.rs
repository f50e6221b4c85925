//! Maximal Lyapunov exponent by Benettin renormalization of the variational
//! flow, and Lyapunov maps over parameter or initial-condition grids.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AtomState, SystemParams, TangentVector};
use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::integrator::{integrate_with_tangent, integrate_with_tangent_backward, IntegratorConfig, TangentTrace};
use crate::poincare::EnergyShell;

pub const DEFAULT_TOTAL_TAU: f64 = 1e5;
pub const DEFAULT_RENORM_INTERVAL: f64 = 5.0;
/// Number of blocks used for the standard error.
pub const STDERR_BLOCKS: usize = 20;
/// Smallest exponent ever called chaotic.
pub const CHAOS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSettings {
    pub total_tau: f64,
    pub renorm_interval: f64,
    pub integrator: IntegratorConfig,
    pub initial_tangent: TangentVector,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        Self {
            total_tau: DEFAULT_TOTAL_TAU,
            renorm_interval: DEFAULT_RENORM_INTERVAL,
            integrator: IntegratorConfig::coarse(),
            initial_tangent: TangentVector::diagonal(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Final finite-time exponent `λ(total_tau)`.
    pub lambda: f64,
    /// `(τ, λ(τ))` at every renormalization.
    pub series: Vec<(f64, f64)>,
    pub renorm_interval: f64,
    pub total_tau: f64,
    /// Standard error of the block-averaged growth rate.
    pub stderr: f64,
    /// False when `stderr > |λ|`.
    pub converged: bool,
}

impl LyapunovEstimate {
    fn from_trace(trace: &TangentTrace, renorm_interval: f64) -> Result<Self> {
        let series = trace.cumulative_log_growth().into_iter().map(|(t, l)| (t, l / t)).collect::<Vec<_>>();
        let &(total_tau, lambda) = series.last().ok_or_else(|| Error::domain("no renormalization checkpoints"))?;
        let stderr = block_stderr(&trace.checkpoints, STDERR_BLOCKS);
        Ok(Self { lambda, series, renorm_interval, total_tau, stderr, converged: stderr <= lambda.abs() })
    }

    /// Chaotic when `λ > max(3·stderr, CHAOS_FLOOR)`.
    pub fn is_chaotic(&self) -> bool {
        self.lambda > chaos_threshold(self.stderr)
    }
}

pub fn chaos_threshold(stderr: f64) -> f64 {
    (3.0 * stderr).max(CHAOS_FLOOR)
}

/// Standard error of the mean growth rate, from the spread of the rates of
/// `blocks` consecutive groups of renormalization intervals.
fn block_stderr(checkpoints: &[(f64, f64)], blocks: usize) -> f64 {
    let n = checkpoints.len();
    if n < 2 * blocks {
        return f64::INFINITY;
    }
    let mut rates = Vec::with_capacity(blocks);
    let mut prev_t = 0.0;
    for b in 0..blocks {
        let lo = b * n / blocks;
        let hi = (b + 1) * n / blocks;
        let log: f64 = checkpoints[lo..hi].iter().map(|(_, g)| g.ln()).sum();
        let t_end = checkpoints[hi - 1].0;
        rates.push(log / (t_end - prev_t));
        prev_t = t_end;
    }
    let mean = rates.iter().sum::<f64>() / blocks as f64;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (blocks - 1) as f64;
    (var / blocks as f64).sqrt()
}

fn check_settings(settings: &LyapunovSettings) -> Result<()> {
    if !(settings.renorm_interval > 0.0 && settings.total_tau >= 2.0 * STDERR_BLOCKS as f64 * settings.renorm_interval) {
        return Err(Error::InvalidParameter {
            field: "total_tau",
            reason: format!(
                "needs at least {} renormalization intervals, got total_tau = {} with interval {}",
                2 * STDERR_BLOCKS,
                settings.total_tau,
                settings.renorm_interval
            ),
        });
    }
    Ok(())
}

/// Maximal Lyapunov exponent of the trajectory through `s0`.
pub fn max_lyapunov(s0: &AtomState, params: &SystemParams, settings: &LyapunovSettings) -> Result<LyapunovEstimate> {
    check_settings(settings)?;
    let (_, trace) = integrate_with_tangent(
        s0,
        &settings.initial_tangent,
        params,
        settings.total_tau,
        settings.renorm_interval,
        &settings.integrator,
    )?;
    LyapunovEstimate::from_trace(&trace, settings.renorm_interval)
}

/// Maximal exponent of the time-reversed flow through `s0`.
pub fn max_lyapunov_backward(s0: &AtomState, params: &SystemParams, settings: &LyapunovSettings) -> Result<LyapunovEstimate> {
    check_settings(settings)?;
    let (_, trace) = integrate_with_tangent_backward(
        s0,
        &settings.initial_tangent,
        params,
        settings.total_tau,
        settings.renorm_interval,
        &settings.integrator,
    )?;
    LyapunovEstimate::from_trace(&trace, settings.renorm_interval)
}

/// Named grid axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn linspace(name: impl Into<String>, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidParameter {
                field: "axis",
                reason: format!("need lo < hi and at least 2 points, got [{lo}, {hi}] × {n}"),
            });
        }
        let values = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Ok(Self { name: name.into(), values })
    }

    /// Logarithmically spaced values between positive `lo` and `hi`.
    pub fn logspace(name: impl Into<String>, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0) {
            return Err(Error::InvalidParameter { field: "axis", reason: format!("log axis needs lo > 0, got {lo}") });
        }
        let mut axis = Self::linspace(name, lo.ln(), hi.ln(), n)?;
        axis.values.iter_mut().for_each(|v| *v = v.exp());
        // exp(ln x) can miss x by an ulp; keep the endpoints as given.
        axis.values[0] = lo;
        axis.values[n - 1] = hi;
        Ok(axis)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum MapCell {
    Value { lambda: f64, stderr: f64, converged: bool, chaotic: bool },
    /// No admissible initial condition at this grid point.
    Void { reason: String },
    Failed { error: String },
}

impl MapCell {
    fn from_estimate(r: Result<LyapunovEstimate>) -> Self {
        match r {
            Ok(e) => MapCell::Value { lambda: e.lambda, stderr: e.stderr, converged: e.converged, chaotic: e.is_chaotic() },
            Err(e) => MapCell::Failed { error: e.to_string() },
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            MapCell::Value { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }
}

/// Exponents on a `rows × cols` grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovMap {
    pub rows: Axis,
    pub cols: Axis,
    pub cells: Vec<MapCell>,
}

impl LyapunovMap {
    pub fn cell(&self, row: usize, col: usize) -> &MapCell {
        &self.cells[row * self.cols.len() + col]
    }

    pub fn failed_count(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, MapCell::Failed { .. })).count()
    }

    /// `λ` values as a matrix; `None` for void and failed cells.
    pub fn values(&self) -> Vec<Vec<Option<f64>>> {
        self.cells.chunks(self.cols.len()).map(|row| row.iter().map(MapCell::lambda).collect()).collect()
    }
}

/// Initial state used for the parameter map when none is given:
/// `x0 = 0, p0 = 200, u0 = v0 = 0, z0 = −1`.
pub fn default_map_state() -> AtomState {
    AtomState::new_unchecked(0.0, 200.0, 0.0, 0.0, -1.0)
}

/// `λ` over a grid of recoil frequencies (rows) and detunings (cols) from a
/// fixed initial state.
pub fn lyapunov_parameter_map<E: Executor>(
    omega_r: &Axis,
    delta: &Axis,
    s0: &AtomState,
    settings: &LyapunovSettings,
    exec: &E,
) -> Result<LyapunovMap> {
    check_settings(settings)?;
    let ncols = delta.len();
    let cells = exec.run(omega_r.len() * ncols, |i| {
        let (r, c) = (i / ncols, i % ncols);
        let cell = SystemParams::new(omega_r.values[r], delta.values[c]).and_then(|p| max_lyapunov(s0, &p, settings));
        MapCell::from_estimate(cell)
    });
    Ok(LyapunovMap { rows: omega_r.clone(), cols: delta.clone(), cells })
}

/// `λ` over initial Bloch components `v0` (rows) and `z0` (cols) with
/// `u0 = +√(1 − v0² − z0²)` and the momentum chosen to put the state on
/// `shell` at `x0`.
pub fn lyapunov_bloch_map<E: Executor>(
    v0: &Axis,
    z0: &Axis,
    shell: &EnergyShell,
    x0: f64,
    settings: &LyapunovSettings,
    exec: &E,
) -> Result<LyapunovMap> {
    check_settings(settings)?;
    let ncols = z0.len();
    let cells = exec.run(v0.len() * ncols, |i| {
        let (v, z) = (v0.values[i / ncols], z0.values[i % ncols]);
        let rest = 1.0 - v * v - z * z;
        if rest < 0.0 {
            return MapCell::Void { reason: format!("v0² + z0² = {} > 1", 1.0 - rest) };
        }
        let u = rest.sqrt();
        match shell.momentum_for(x0, u, z) {
            None => MapCell::Void { reason: "no real momentum on the shell".into() },
            Some(p) => {
                let s0 = AtomState::new_unchecked(x0, p, u, v, z);
                MapCell::from_estimate(max_lyapunov(&s0, &shell.params, settings))
            }
        }
    });
    Ok(LyapunovMap { rows: v0.clone(), cols: z0.clone(), cells })
}
