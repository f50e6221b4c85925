//! Exact and approximate solutions in limiting regimes.
//!
//! At exact resonance (`Δ = 0`) the dipole quadrature `u` is conserved and
//! the centre of mass is a pendulum, solved with Jacobi elliptic functions.
//! Away from resonance the module provides the far-detuned and fast-atom
//! limits, the Doppler-Rabi one-wave reduction and the driven-dipole
//! approximation.
//!
//! Formulas are evaluated even when their regime conditions fail. The
//! `*_validity` functions report the violated conditions separately, so a
//! caller can map where an approximation holds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AtomState, SystemParams};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::specfun::{complete_elliptic_k, jacobi_am, jacobi_sn_cn_dn};

/// Ratio treated as "much greater than" by the validity checks.
pub const MUCH_GREATER: f64 = 2.0;

const PHASE_TOLERANCE: f64 = 1e-10;

/// Regime conditions that a formula evaluation did not satisfy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub violations: Vec<String>,
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(what());
        }
    }
}

/// Critical momentum `p_cr = 2 √(u0/ω_r)` separating trapped from ballistic
/// motion at resonance.
pub fn critical_momentum(u0: f64, omega_r: f64) -> Result<f64> {
    if !(omega_r > 0.0 && omega_r.is_finite()) {
        return Err(Error::InvalidParameter { field: "omega_r", reason: format!("must be positive, got {omega_r}") });
    }
    if !(u0 > 0.0) {
        return Err(Error::domain(format!("u0 = {u0} ≤ 0 has no trapping threshold")));
    }
    Ok(2.0 * (u0 / omega_r).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitRegime {
    Trapped,
    Separatrix,
    Ballistic,
}

/// Pendulum orbit at exact resonance starting from `x0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantOrbit {
    pub p0: f64,
    pub u0: f64,
    pub omega_r: f64,
    /// `K = (p0/2) √(ω_r/u0)`; signed like `p0`.
    pub modulus: f64,
    pub regime: OrbitRegime,
}

impl ResonantOrbit {
    pub fn new(p0: f64, u0: f64, omega_r: f64) -> Result<Self> {
        critical_momentum(u0, omega_r)?;
        if !p0.is_finite() {
            return Err(Error::InvalidParameter { field: "p0", reason: "must be finite".into() });
        }
        let modulus = 0.5 * p0 * (omega_r / u0).sqrt();
        let k = modulus.abs();
        let regime = if k < 1.0 {
            OrbitRegime::Trapped
        } else if k == 1.0 {
            OrbitRegime::Separatrix
        } else {
            OrbitRegime::Ballistic
        };
        Ok(Self { p0, u0, omega_r, modulus, regime })
    }

    /// Time for `x` to return to 0 with the initial velocity (trapped) or to
    /// advance by `2π` (ballistic). `None` on the separatrix.
    pub fn period(&self) -> Option<f64> {
        let k = self.modulus.abs();
        match self.regime {
            OrbitRegime::Trapped => Some(4.0 * complete_elliptic_k(k).ok()? / (self.omega_r * self.u0).sqrt()),
            OrbitRegime::Separatrix => None,
            OrbitRegime::Ballistic => {
                Some(4.0 * complete_elliptic_k(1.0 / k).ok()? / (self.omega_r * self.p0.abs()))
            }
        }
    }

    /// `(x, p)` at time `tau`.
    pub fn position_momentum(&self, tau: f64) -> Result<(f64, f64)> {
        let k = self.modulus.abs();
        match self.regime {
            OrbitRegime::Trapped | OrbitRegime::Separatrix => {
                let (sn, cn, _) = jacobi_sn_cn_dn((self.omega_r * self.u0).sqrt() * tau, k)?;
                Ok((2.0 * (self.modulus * sn).asin(), self.p0 * cn))
            }
            OrbitRegime::Ballistic => {
                let arg = 0.5 * self.omega_r * self.p0 * tau;
                let inv = 1.0 / k;
                let (_, _, dn) = jacobi_sn_cn_dn(arg, inv)?;
                Ok((2.0 * jacobi_am(arg, inv)?, self.p0 * dn))
            }
        }
    }

    /// `cos x(τ)`, computed without the `arcsin`/`am` round trip.
    pub fn cos_x(&self, tau: f64) -> Result<f64> {
        let k = self.modulus.abs();
        match self.regime {
            OrbitRegime::Trapped | OrbitRegime::Separatrix => {
                let (sn, _, _) = jacobi_sn_cn_dn((self.omega_r * self.u0).sqrt() * tau, k)?;
                Ok(1.0 - 2.0 * k * k * sn * sn)
            }
            OrbitRegime::Ballistic => {
                let (sn, _, _) = jacobi_sn_cn_dn(0.5 * self.omega_r * self.p0 * tau, 1.0 / k)?;
                Ok(1.0 - 2.0 * sn * sn)
            }
        }
    }

    /// Natural time scale for variations of `cos x`.
    fn time_scale(&self) -> f64 {
        let libration = 1.0 / (self.omega_r * self.u0).sqrt();
        let transit = 2.0 / (self.omega_r * self.p0.abs()).max(f64::MIN_POSITIVE);
        libration.min(transit)
    }

    /// `∫_a^b cos x(τ′) dτ′` by adaptive quadrature.
    pub fn phase_integral(&self, a: f64, b: f64) -> Result<f64> {
        // Validate the modulus once; the integrand below cannot fail after that.
        self.cos_x(a)?;
        let f = |t: f64| self.cos_x(t).unwrap_or(f64::NAN);
        let value = quadrature::integrate(f, a, b, PHASE_TOLERANCE, self.time_scale());
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::domain("phase integral is not finite"))
        }
    }
}

/// Inversion `z(τ)` at exact resonance.
///
/// With `u` conserved, `(v, z)` rotates on a circle of radius
/// `A = √(v0² + z0²) = √(1 − u0²)` at the instantaneous rate `−2 cos x`, so
/// `z(τ) = A sin(θ0 − 2 ∫₀^τ cos x)` with `θ0 = atan2(z0, v0)`. This fixes
/// the sign ambiguity by matching both `z(0)` and `ż(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonantInversion {
    pub orbit: ResonantOrbit,
    pub amplitude: f64,
    pub theta0: f64,
}

impl ResonantInversion {
    pub fn new(orbit: ResonantOrbit, v0: f64, z0: f64) -> Result<Self> {
        if orbit.u0 * orbit.u0 + z0 * z0 > 1.0 + 1e-10 {
            return Err(Error::InvalidState(format!("u0² + z0² = {} exceeds 1", orbit.u0 * orbit.u0 + z0 * z0)));
        }
        Ok(Self { orbit, amplitude: v0.hypot(z0), theta0: z0.atan2(v0) })
    }

    fn from_phase(&self, phase: f64) -> f64 {
        self.amplitude * (self.theta0 - 2.0 * phase).sin()
    }

    pub fn at(&self, tau: f64) -> Result<f64> {
        Ok(self.from_phase(self.orbit.phase_integral(0.0, tau)?))
    }

    /// `z` at each of the non-decreasing times `taus`, accumulating the
    /// phase integral from one time to the next.
    pub fn series(&self, taus: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(taus.len());
        let mut phase = 0.0;
        let mut last = 0.0;
        for &t in taus {
            if t < last {
                return Err(Error::domain("times must be non-decreasing and start at or after 0"));
            }
            phase += self.orbit.phase_integral(last, t)?;
            last = t;
            out.push(self.from_phase(phase));
        }
        Ok(out)
    }
}

/// Convenience wrapper for [`ResonantOrbit::position_momentum`].
pub fn resonant_position_momentum(tau: f64, p0: f64, u0: f64, omega_r: f64) -> Result<(f64, f64)> {
    ResonantOrbit::new(p0, u0, omega_r)?.position_momentum(tau)
}

/// Convenience wrapper for [`ResonantInversion::at`].
pub fn resonant_inversion(tau: f64, orbit: &ResonantOrbit, v0: f64, z0: f64) -> Result<f64> {
    ResonantInversion::new(*orbit, v0, z0)?.at(tau)
}

/// Fast-atom inversion at resonance with `p ≈ p0` (Raman-Nath), to second
/// order in `1/(ω_r p0)`: the exact solution with `x = ω_r p0 τ` is
/// `z = z0 cos φ − v0 sin φ` with `φ = 2 sin(ω_r p0 τ)/(ω_r p0)`.
pub fn raman_nath_inversion(tau: f64, z0: f64, v0: f64, p0: f64, omega_r: f64) -> f64 {
    let w = omega_r * p0;
    let s = (w * tau).sin();
    z0 - 2.0 * v0 / w * s - 2.0 * z0 / (w * w) * s * s
}

pub fn raman_nath_validity(p0: f64, u0: f64, omega_r: f64) -> Validity {
    let mut v = Validity::default();
    let w = (omega_r * p0).abs();
    v.require(w >= MUCH_GREATER * 2.0, || format!("|ω_r p0| = {w} is not ≫ 2"));
    if let Ok(p_cr) = critical_momentum(u0, omega_r) {
        v.require(p0.abs() >= MUCH_GREATER * p_cr, || format!("|p0| = {} is not ≫ p_cr = {p_cr}", p0.abs()));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitBranch {
    FarDetuned,
    FastAtom,
}

/// Phase `φ0` with `u = R sin(Δτ + φ0)`, `v = R cos(Δτ + φ0)`. Equals
/// `arcsin(u0/R)` for `v0 ≥ 0` and extends it to `v0 < 0`.
fn dipole_phase(u0: f64, v0: f64) -> f64 {
    u0.atan2(v0)
}

/// Inversion in the far-detuned or fast-atom limit.
///
/// `x` is the atomic position at `tau`; it enters the far-detuned branch
/// only (the fast-atom branch assumes `x = ω_r p0 τ`).
pub fn limit_inversion(tau: f64, x: f64, s0: &AtomState, params: &SystemParams, branch: LimitBranch) -> Result<f64> {
    let r = s0.u.hypot(s0.v);
    if r == 0.0 {
        return Ok(s0.z);
    }
    let phi0 = dipole_phase(s0.u, s0.v);
    let delta = params.delta;
    match branch {
        LimitBranch::FarDetuned => {
            if delta == 0.0 {
                return Err(Error::domain("far-detuned limit needs Δ ≠ 0"));
            }
            Ok(s0.z + 2.0 * s0.u / delta - 2.0 * r / delta * x.cos() * (delta * tau + phi0).sin())
        }
        LimitBranch::FastAtom => {
            let w = params.omega_r * s0.p;
            if w == 0.0 {
                return Err(Error::domain("fast-atom limit needs p0 ≠ 0"));
            }
            Ok(s0.z - 2.0 * r / w * (delta * tau + phi0).cos() * (w * tau).sin())
        }
    }
}

pub fn limit_validity(s0: &AtomState, params: &SystemParams, branch: LimitBranch) -> Validity {
    let mut v = Validity::default();
    let w = (params.omega_r * s0.p).abs();
    let d = params.delta.abs();
    match branch {
        LimitBranch::FarDetuned => {
            let m = w.max(2.0);
            v.require(d >= MUCH_GREATER * m, || format!("|Δ| = {d} is not ≫ max(|ω_r p|, 2) = {m}"));
        }
        LimitBranch::FastAtom => {
            let m = d.max(2.0);
            v.require(w >= MUCH_GREATER * m, || format!("|ω_r p0| = {w} is not ≫ max(|Δ|, 2) = {m}"));
            let kin = params.omega_r * s0.p * s0.p;
            v.require(kin >= MUCH_GREATER * 4.0, || format!("ω_r p0² = {kin} is not ≫ 4"));
        }
    }
    v
}

/// Dipole quadrature `u(τ)` from the driven-oscillator equation
/// `ü + Δ² u = 2 z0 Δ cos x`, with the two driving integrals evaluated by
/// quadrature along the supplied position history `x(τ′)`.
pub fn driven_dipole(tau: f64, s0: &AtomState, delta: f64, x: impl Fn(f64) -> f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::domain("driven dipole needs Δ ≠ 0; at resonance u = u0"));
    }
    let panel = 0.25 / delta.abs();
    let ic = quadrature::integrate(|t| (delta * t).cos() * x(t).cos(), 0.0, tau, PHASE_TOLERANCE, panel);
    let is = quadrature::integrate(|t| (delta * t).sin() * x(t).cos(), 0.0, tau, PHASE_TOLERANCE, panel);
    let (s, c) = (delta * tau).sin_cos();
    Ok(2.0 * s0.z * (s * ic - c * is) + s0.u * c + s0.v * s)
}

/// Far-detuned approximation `u ≈ (2z0/Δ) cos x + R sin(Δτ + φ0)` for a
/// slowly moving atom.
///
/// The free oscillation `(R, φ0)` is fitted to the initial data after
/// removing the driven part, `(u0 − (2z0/Δ) cos x0, v0)`, so `u(0) = u0`.
pub fn driven_dipole_far_detuned(tau: f64, x: f64, s0: &AtomState, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::domain("driven dipole needs Δ ≠ 0; at resonance u = u0"));
    }
    let forced = 2.0 * s0.z / delta;
    let u_free = s0.u - forced * s0.x.cos();
    let r = u_free.hypot(s0.v);
    Ok(forced * x.cos() + r * (delta * tau + dipole_phase(u_free, s0.v)).sin())
}

/// Effective far-detuned potential `−(2z0/Δ) cos² x`, zero at `x = π/2`.
pub fn effective_potential(x: f64, z0: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::domain("effective potential needs Δ ≠ 0"));
    }
    let c = x.cos();
    Ok(-2.0 * z0 / delta * c * c)
}

/// Resonant pendulum potential `−u0 cos x`.
pub fn resonant_potential(x: f64, u0: f64) -> f64 {
    -u0 * x.cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunningWave {
    /// Detuning `Δ₁ = Δ − ω_r p0`.
    First,
    /// Detuning `Δ₂ = Δ + ω_r p0`.
    Second,
}

/// Detunings seen by a moving atom from the two running waves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DopplerFrame {
    pub delta1: f64,
    pub delta2: f64,
    /// Wave closer to resonance, the one kept in the one-wave reduction.
    pub wave: RunningWave,
    /// `√(Δ_w² + 1)` for the selected wave.
    pub omega_z: f64,
}

impl DopplerFrame {
    pub fn new(params: &SystemParams, p0: f64) -> Self {
        let shift = params.omega_r * p0;
        let delta1 = params.delta - shift;
        let delta2 = params.delta + shift;
        let wave = if delta1.abs() <= delta2.abs() { RunningWave::First } else { RunningWave::Second };
        let mut frame = Self { delta1, delta2, wave, omega_z: 0.0 };
        frame.omega_z = frame.detuning().hypot(1.0);
        frame
    }

    /// Detuning of the selected wave.
    pub fn detuning(&self) -> f64 {
        match self.wave {
            RunningWave::First => self.delta1,
            RunningWave::Second => self.delta2,
        }
    }
}

/// Inversion in the one-wave (Doppler-Rabi) reduction
/// `u̇ = Δ_w v, v̇ = −Δ_w u + z, ż = −v`.
pub fn doppler_rabi_inversion(tau: f64, s0: &AtomState, frame: &DopplerFrame) -> f64 {
    let d = frame.detuning();
    let w = frame.omega_z;
    let w2 = w * w;
    let (s, c) = (w * tau).sin_cos();
    s0.u * d / w2 * (1.0 - c) - s0.v / w * s + s0.z * (d * d / w2 + c / w2)
}

pub fn doppler_rabi_validity(s0: &AtomState, params: &SystemParams) -> Validity {
    let mut v = Validity::default();
    let d = params.delta.abs();
    v.require(d >= MUCH_GREATER, || format!("|Δ| = {d} is not ≫ 1"));
    let kin = 0.5 * params.omega_r * s0.p * s0.p;
    v.require(kin >= MUCH_GREATER * 2.0, || format!("kinetic energy {kin} is not ≫ potential amplitude 2"));
    v
}

/// Estimated stochastic-layer width, normalized to the separatrix energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticLayer {
    /// `ω_z′ / ω_0`.
    pub ratio: f64,
    /// `ln D`; finite even when `D` underflows.
    pub log_width: f64,
    pub width: f64,
}

/// `D = 8π (ω_z′/ω_0)³ exp(−π ω_z′ / (2 ω_0))` with `ω_z′ = √(Δ² + 4)` and
/// `ω_0 = √(2 ω_r |Δ|) / ω_z′`.
pub fn stochastic_layer_width(params: &SystemParams) -> Result<StochasticLayer> {
    if params.delta == 0.0 {
        return Err(Error::domain("stochastic layer width undefined at Δ = 0"));
    }
    let wz = params.delta.hypot(2.0);
    let w0 = (2.0 * params.omega_r * params.delta.abs()).sqrt() / wz;
    let ratio = wz / w0;
    let log_width = (8.0 * PI).ln() + 3.0 * ratio.ln() - 0.5 * PI * ratio;
    Ok(StochasticLayer { ratio, log_width, width: log_width.exp() })
}
