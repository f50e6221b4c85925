//! Semiclassical dynamics of a two-level atom in a one-dimensional
//! standing-wave optical lattice.
//!
//! The centre-of-mass motion `(x, p)` is classical and couples to the Bloch
//! vector `(u, v, z)` of the internal state:
//!
//! ```text
//! ẋ = ω_r p,  ṗ = −u sin x,  u̇ = Δ v,  v̇ = −Δ u + 2 z cos x,  ż = −2 v cos x
//! ```
//!
//! The crate integrates these equations ([`integrator`]), evaluates the exact
//! and approximate solutions known in limiting regimes ([`analytic`],
//! [`specfun`]), measures chaos through the maximal Lyapunov exponent
//! ([`chaos`]), builds Poincaré sections at `cos x = 1` ([`poincare`]) and
//! runs the exit-time scattering experiment ([`fractal`]).

pub mod analytic;
pub mod chaos;
pub mod dynamics;
pub mod error;
pub mod executor;
pub mod fractal;
pub mod integrator;
pub mod poincare;
mod quadrature;
pub mod specfun;

pub use dynamics::{AtomState, PhysicalParams, SystemParams, TangentVector};
pub use error::{Error, Result};
pub use integrator::{IntegratorConfig, Sampling, Trajectory};
