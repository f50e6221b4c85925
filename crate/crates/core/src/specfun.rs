//! Jacobi elliptic functions and the complete elliptic integral of the
//! first kind, for real arguments and moduli `0 ≤ k ≤ 1`.
//!
//! Both are evaluated through the arithmetic-geometric mean. Moduli above one
//! are not accepted; callers use the reciprocal-modulus form of their
//! solution instead.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_LEVELS: usize = 40;

/// Elliptic modulus `k` (not the parameter `m = k²`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EllipticModulus(f64);

impl EllipticModulus {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::ModulusOutOfRange(k));
        }
        Ok(Self(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the modulus lies in the canonical range `[0, 1]`.
    pub fn is_canonical(self) -> bool {
        self.0 <= 1.0
    }

    /// `1/k`, the modulus used for the ballistic branch.
    pub fn reciprocal(self) -> Result<Self> {
        Self::new(1.0 / self.0)
    }
}

fn check_modulus(k: f64) -> Result<()> {
    if !(k.is_finite() && (0.0..=1.0).contains(&k)) {
        return Err(Error::ModulusOutOfRange(k));
    }
    Ok(())
}

/// `K(k) = ∫₀^{π/2} dθ / √(1 − k² sin²θ)` via `π / (2 AGM(1, √(1−k²)))`.
pub fn complete_elliptic_k(k: f64) -> Result<f64> {
    if k == 1.0 {
        return Err(Error::EllipticOverflow(k));
    }
    check_modulus(k)?;
    let mut a = 1.0f64;
    let mut b = ((1.0 - k) * (1.0 + k)).sqrt();
    if b == 0.0 {
        return Err(Error::EllipticOverflow(k));
    }
    for _ in 0..MAX_LEVELS {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let a_next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = a_next;
    }
    Ok(FRAC_PI_2 / a)
}

/// Amplitude `φ` with `sn = sin φ`, from the descending Landen recursion.
fn landen_amplitude(u: f64, k: f64) -> f64 {
    let mut a = [0.0f64; MAX_LEVELS + 1];
    let mut c = [0.0f64; MAX_LEVELS + 1];
    a[0] = 1.0;
    c[0] = k;
    let mut b = ((1.0 - k) * (1.0 + k)).sqrt();
    let mut n = 0;
    while n < MAX_LEVELS && c[n].abs() > 1e-16 * a[n] {
        let (an, bn) = (a[n], b);
        a[n + 1] = 0.5 * (an + bn);
        c[n + 1] = 0.5 * (an - bn);
        b = (an * bn).sqrt();
        n += 1;
    }
    let mut phi = (1u64 << n) as f64 * a[n] * u;
    for j in (1..=n).rev() {
        phi = 0.5 * (phi + (c[j] / a[j] * phi.sin()).asin());
    }
    phi
}

/// Simultaneous `(sn, cn, dn)(u, k)` for `0 ≤ k ≤ 1`.
pub fn jacobi_sn_cn_dn(u: f64, k: f64) -> Result<(f64, f64, f64)> {
    check_modulus(k)?;
    if k == 0.0 {
        let (s, c) = u.sin_cos();
        return Ok((s, c, 1.0));
    }
    if k == 1.0 {
        let sech = 1.0 / u.cosh();
        return Ok((u.tanh(), sech, sech));
    }
    let (sn, cn) = landen_amplitude(u, k).sin_cos();
    // dn² = k'² + k² cn² is a sum of non-negative terms, so it keeps full
    // relative accuracy near the quarter period where cn → 0.
    let dn = ((1.0 - k) * (1.0 + k) + k * k * cn * cn).sqrt();
    Ok((sn, cn, dn))
}

/// Unwrapped Jacobi amplitude `am(u, k)`, continuous and, for `k < 1`,
/// increasing in `u`.
pub fn jacobi_am(u: f64, k: f64) -> Result<f64> {
    check_modulus(k)?;
    if k == 0.0 {
        return Ok(u);
    }
    if k == 1.0 {
        return Ok(u.sinh().atan());
    }
    Ok(landen_amplitude(u, k))
}
