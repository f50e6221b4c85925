#![allow(dead_code)]

use atom_lattice::dynamics::{derivatives, variational_derivatives};
use atom_lattice::integrator::{OdeSystem, Solver};
use atom_lattice::{AtomState, IntegratorConfig, SystemParams, TangentVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Chaotic wandering state at Δ = −0.05.
pub fn wandering() -> (AtomState, SystemParams) {
    (AtomState::new(0.0, 300.0, 0.0, 0.0, -1.0).unwrap(), SystemParams::new(1e-5, -0.05).unwrap())
}

/// Reference and shadow trajectory integrated side by side.
struct Pair(SystemParams);

impl OdeSystem<10> for Pair {
    fn rhs(&self, y: &[f64; 10]) -> [f64; 10] {
        let a = derivatives(&AtomState::from_array(y[..5].try_into().unwrap()), &self.0);
        let b = derivatives(&AtomState::from_array(y[5..].try_into().unwrap()), &self.0);
        std::array::from_fn(|i| if i < 5 { a[i] } else { b[i - 5] })
    }
}

/// Two-trajectory estimate of the maximal exponent: a shadow starts `d0`
/// away along the diagonal and is pulled back to distance `d0` every
/// `interval`.
pub fn pair_lyapunov(s0: &AtomState, params: &SystemParams, total_tau: f64, interval: f64, d0: f64, cfg: &IntegratorConfig) -> f64 {
    let sys = Pair(*params);
    let base = s0.to_array();
    let offset = d0 / 5f64.sqrt();
    let y0: [f64; 10] = std::array::from_fn(|i| if i < 5 { base[i] } else { base[i - 5] + offset });
    let mut solver = Solver::new(&sys, 0.0, y0, *cfg).unwrap();
    let mut log_sum = 0.0;
    let mut k = 1;
    while solver.t() < total_tau {
        let target = (k as f64 * interval).min(total_tau);
        solver.advance_to(target).unwrap();
        let y = *solver.y();
        let d: f64 = (0..5).map(|i| (y[i + 5] - y[i]).powi(2)).sum::<f64>().sqrt();
        log_sum += (d / d0).ln();
        let scale = d0 / d;
        solver.reset_state(std::array::from_fn(|i| if i < 5 { y[i] } else { y[i - 5] + scale * (y[i] - y[i - 5]) }));
        k += 1;
    }
    log_sum / solver.t()
}

/// Classical fourth-order Runge-Kutta with a fixed step.
pub fn rk4<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], y0: [f64; N], h: f64, steps: usize) -> [f64; N] {
    let mut y = y0;
    let add = |y: &[f64; N], k: &[f64; N], c: f64| -> [f64; N] { std::array::from_fn(|i| y[i] + c * k[i]) };
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&add(&y, &k1, h / 2.0));
        let k3 = f(&add(&y, &k2, h / 2.0));
        let k4 = f(&add(&y, &k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    y
}

/// Random point on the unit sphere from two uniforms in `[0, 1)`.
pub fn sphere_point(a: f64, b: f64) -> [f64; 3] {
    let z = 2.0 * a - 1.0;
    let r = (1.0 - z * z).sqrt();
    let phi = std::f64::consts::TAU * b;
    [r * phi.cos(), r * phi.sin(), z]
}

fn random_state(rng: &mut StdRng) -> AtomState {
    let [u, v, z] = sphere_point(rng.gen(), rng.gen());
    AtomState::new(rng.gen_range(-10.0..10.0), rng.gen_range(-3000.0..3000.0), u, v, z).unwrap()
}

fn norm(a: &[f64; 5]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest relative mismatch between the tangent rates and central
/// differences of the vector field, over `n` random states and directions.
pub fn worst_variational_mismatch(n: usize, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let eps = 1e-7;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s = random_state(&mut rng);
        let params = SystemParams::new(10f64.powf(rng.gen_range(-6.0..-2.0)), rng.gen_range(-5.0..5.0)).unwrap();
        let dir: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let a = s.to_array();
        let shifted = |sign: f64| AtomState::from_array(std::array::from_fn(|i| a[i] + sign * eps * dir[i]));
        let fp = derivatives(&shifted(1.0), &params);
        let fm = derivatives(&shifted(-1.0), &params);
        let fd: [f64; 5] = std::array::from_fn(|i| (fp[i] - fm[i]) / (2.0 * eps));
        let an = variational_derivatives(&s, &TangentVector::from_array(dir), &params);
        let diff: [f64; 5] = std::array::from_fn(|i| an[i] - fd[i]);
        worst = worst.max(norm(&diff) / norm(&an).max(1e-12));
    }
    worst
}
