//! State space, control parameters and equations of motion.
//!
//! Everything here is expressed in dimensionless units: position in units of
//! `1/k_f`, momentum in units of `ħ k_f`, time `τ = Ω t`. The only place where
//! SI quantities appear is [`normalize_physical`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `u² + v² + z² = 1` accepted when constructing a state.
pub const BLOCH_TOLERANCE: f64 = 1e-10;

/// Recoil frequencies above this value leave the physical regime `ω_r ≪ 1`.
pub const RECOIL_WARNING_THRESHOLD: f64 = 0.1;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Classical atom in a standing wave together with its Bloch vector.
///
/// Position is kept unwrapped so the distance an atom travels through the
/// lattice stays observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomState {
    pub x: f64,
    pub p: f64,
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl AtomState {
    /// Builds a state, rejecting non-finite fields and Bloch vectors off the
    /// unit sphere by more than [`BLOCH_TOLERANCE`].
    pub fn new(x: f64, p: f64, u: f64, v: f64, z: f64) -> Result<Self> {
        let s = Self { x, p, u, v, z };
        if !s.is_finite() {
            return Err(Error::InvalidState(format!("non-finite component in {s:?}")));
        }
        let r = s.bloch_norm();
        if (r - 1.0).abs() > BLOCH_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "Bloch vector length u²+v²+z² = {r} is not 1"
            )));
        }
        Ok(s)
    }

    /// Builds a state without checking the Bloch constraint.
    pub const fn new_unchecked(x: f64, p: f64, u: f64, v: f64, z: f64) -> Self {
        Self { x, p, u, v, z }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new_unchecked(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.p, self.u, self.v, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn bloch_norm(&self) -> f64 {
        bloch_norm(self)
    }

    /// Projects the Bloch vector back onto the unit sphere.
    ///
    /// Never applied implicitly; long runs that want it must call it.
    pub fn renormalized(self) -> Self {
        let r = self.bloch_norm().sqrt();
        Self { u: self.u / r, v: self.v / r, z: self.z / r, ..self }
    }

    /// Position folded into `[0, 2π)`.
    pub fn wrapped_x(&self) -> f64 {
        self.x.rem_euclid(std::f64::consts::TAU)
    }
}

/// Normalized control parameters `(ω_r, Δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_r: f64,
    pub delta: f64,
}

impl SystemParams {
    pub fn new(omega_r: f64, delta: f64) -> Result<Self> {
        if !(omega_r.is_finite() && omega_r > 0.0) {
            return Err(Error::InvalidParameter {
                field: "omega_r",
                reason: format!("recoil frequency must be positive and finite, got {omega_r}"),
            });
        }
        if !delta.is_finite() {
            return Err(Error::InvalidParameter {
                field: "delta",
                reason: format!("detuning must be finite, got {delta}"),
            });
        }
        Ok(Self { omega_r, delta })
    }

    /// True when `ω_r` is large enough that the semiclassical picture is
    /// questionable. Callers decide whether to warn.
    pub fn outside_physical_regime(&self) -> bool {
        self.omega_r > RECOIL_WARNING_THRESHOLD
    }
}

/// SI description of the atom and the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Transition wavelength, m.
    pub wavelength: f64,
    /// Atomic mass, kg.
    pub atomic_mass: f64,
    /// Rabi frequency Ω, rad/s.
    pub rabi_frequency: f64,
    /// Field minus atomic transition frequency, rad/s.
    pub detuning: f64,
}

impl PhysicalParams {
    /// Cesium D2 line (852 nm) with the given Rabi frequency and detuning.
    pub fn cesium(rabi_frequency: f64, detuning: f64) -> Self {
        Self { wavelength: 852e-9, atomic_mass: 2.2069e-25, rabi_frequency, detuning }
    }

    pub fn wavenumber(&self) -> f64 {
        std::f64::consts::TAU / self.wavelength
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength", self.wavelength),
            ("atomic_mass", self.atomic_mass),
            ("rabi_frequency", self.rabi_frequency),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be strictly positive, got {value}"),
                });
            }
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidParameter {
                field: "detuning",
                reason: format!("must be finite, got {}", self.detuning),
            });
        }
        Ok(())
    }

    /// Velocity in m/s of an atom with dimensionless momentum `p`.
    pub fn velocity(&self, p: f64) -> f64 {
        p * HBAR * self.wavenumber() / self.atomic_mass
    }

    /// Rabi frequency that yields the requested normalized recoil frequency.
    pub fn rabi_frequency_for_recoil(wavelength: f64, atomic_mass: f64, omega_r: f64) -> f64 {
        let k = std::f64::consts::TAU / wavelength;
        HBAR * k * k / (atomic_mass * omega_r)
    }
}

/// Converts SI parameters to `ω_r = ħk²/(mΩ)` and `Δ = detuning/Ω`.
pub fn normalize_physical(phys: &PhysicalParams) -> Result<SystemParams> {
    phys.validate()?;
    let k = phys.wavenumber();
    let omega_r = HBAR * k * k / (phys.atomic_mass * phys.rabi_frequency);
    SystemParams::new(omega_r, phys.detuning / phys.rabi_frequency)
}

/// Perturbation of an [`AtomState`] in the tangent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dx: f64,
    pub dp: f64,
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
}

impl TangentVector {
    pub const fn new(dx: f64, dp: f64, du: f64, dv: f64, dz: f64) -> Self {
        Self { dx, dp, du, dv, dz }
    }

    /// The normalized diagonal direction `(1,1,1,1,1)/√5`.
    pub fn diagonal() -> Self {
        let c = 1.0 / 5f64.sqrt();
        Self::new(c, c, c, c, c)
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.dx, self.dp, self.du, self.dv, self.dz]
    }

    /// Euclidean norm over all five components.
    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&c| c == 0.0)
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::from_array(self.to_array().map(|c| c * factor))
    }
}

/// Right-hand side `(ẋ, ṗ, u̇, v̇, ż)` of the equations of motion.
#[inline]
pub fn derivatives(s: &AtomState, params: &SystemParams) -> [f64; 5] {
    let (sin_x, cos_x) = s.x.sin_cos();
    rates(s, params, sin_x, cos_x)
}

#[inline]
fn rates(s: &AtomState, params: &SystemParams, sin_x: f64, cos_x: f64) -> [f64; 5] {
    [
        params.omega_r * s.p,
        -s.u * sin_x,
        params.delta * s.v,
        -params.delta * s.u + 2.0 * s.z * cos_x,
        -2.0 * s.v * cos_x,
    ]
}

/// Jacobian of [`derivatives`] applied to the tangent vector `t`.
#[inline]
pub fn variational_derivatives(
    s: &AtomState,
    t: &TangentVector,
    params: &SystemParams,
) -> [f64; 5] {
    let (sin_x, cos_x) = s.x.sin_cos();
    tangent_rates(s, t, params, sin_x, cos_x)
}

#[inline]
fn tangent_rates(
    s: &AtomState,
    t: &TangentVector,
    params: &SystemParams,
    sin_x: f64,
    cos_x: f64,
) -> [f64; 5] {
    [
        params.omega_r * t.dp,
        -t.du * sin_x - s.u * cos_x * t.dx,
        params.delta * t.dv,
        -params.delta * t.du + 2.0 * t.dz * cos_x - 2.0 * s.z * sin_x * t.dx,
        -2.0 * t.dv * cos_x + 2.0 * s.v * sin_x * t.dx,
    ]
}

/// State and tangent rates sharing one `sin_cos` evaluation.
#[inline]
pub fn joint_derivatives(
    s: &AtomState,
    t: &TangentVector,
    params: &SystemParams,
) -> ([f64; 5], [f64; 5]) {
    let (sin_x, cos_x) = s.x.sin_cos();
    (rates(s, params, sin_x, cos_x), tangent_rates(s, t, params, sin_x, cos_x))
}

/// `U = −u cos x − (Δ/2) z`.
pub fn potential_energy(s: &AtomState, params: &SystemParams) -> f64 {
    -s.u * s.x.cos() - 0.5 * params.delta * s.z
}

/// `W = (ω_r/2) p² + U`, conserved by the flow.
pub fn total_energy(s: &AtomState, params: &SystemParams) -> f64 {
    0.5 * params.omega_r * s.p * s.p + potential_energy(s, params)
}

/// `u² + v² + z²`, conserved by the flow.
pub fn bloch_norm(s: &AtomState) -> f64 {
    s.u * s.u + s.v * s.v + s.z * s.z
}
