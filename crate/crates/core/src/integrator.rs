//! Adaptive Dormand–Prince 8(5,3) integration with continuous output and
//! crossing detection.
//!
//! The stepper is generic over the dimension so the same code drives the
//! 5-dimensional equations of motion and the 10-dimensional state + tangent
//! system used for Lyapunov exponents.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bloch_norm, derivatives, joint_derivatives, total_energy, AtomState, SystemParams,
    TangentVector, BLOCH_TOLERANCE,
};
use crate::error::{Error, Result};

/// Autonomous first-order system `ẏ = f(y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, y: &[f64; N]) -> [f64; N];
}

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on |h|, in τ units.
    pub max_step: f64,
    /// First trial step, in τ units.
    pub initial_step: f64,
}

impl IntegratorConfig {
    /// Tolerances used for Poincaré sections and exit-time scans.
    ///
    /// The step cap keeps at least 25 steps per Rabi cycle; without it the
    /// Bloch norm drifts by ~1e-7 per 1e4 time units at this tolerance.
    pub const fn precise() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-10, max_step: 0.125, initial_step: 1e-3 }
    }

    /// Tolerances for coarse parameter sweeps.
    pub const fn coarse() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-8, max_step: 0.5, initial_step: 1e-3 }
    }

    /// Equal relative and absolute tolerance with the precise step cap.
    pub const fn with_tolerance(tol: f64) -> Self {
        Self { rel_tol: tol, abs_tol: tol, max_step: 0.125, initial_step: 1e-3 }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(value > 0.0 && value <= 1e-2) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("tolerance must lie in (0, 1e-2], got {value}"),
                });
            }
        }
        for (field, value) in [("max_step", self.max_step), ("initial_step", self.initial_step)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self::precise()
    }
}

// Dormand–Prince 8(5,3) tableau, 12 stages plus the FSAL stage and three
// extra stages for the continuous extension.
const STAGES: usize = 12;
// Nonzero stage coefficients a_ij, row i lists (j, a_ij).
const A: [&[(usize, f64)]; 16] = [
    &[],
    &[(0, 0.05260015195876773)],
    &[(0, 0.0197250569845379), (1, 0.0591751709536137)],
    &[(0, 0.02958758547680685), (2, 0.08876275643042054)],
    &[(0, 0.2413651341592667), (2, -0.8845494793282861), (3, 0.924834003261792)],
    &[(0, 0.037037037037037035), (3, 0.17082860872947386), (4, 0.12546768756682242)],
    &[(0, 0.037109375), (3, 0.17025221101954405), (4, 0.06021653898045596), (5, -0.017578125)],
    &[(0, 0.03709200011850479), (3, 0.17038392571223998), (4, 0.10726203044637328), (5, -0.015319437748624402), (6, 0.008273789163814023)],
    &[(0, 0.6241109587160757), (3, -3.3608926294469414), (4, -0.868219346841726), (5, 27.59209969944671), (6, 20.154067550477894), (7, -43.48988418106996)],
    &[(0, 0.47766253643826434), (3, -2.4881146199716677), (4, -0.590290826836843), (5, 21.230051448181193), (6, 15.279233632882423), (7, -33.28821096898486), (8, -0.020331201708508627)],
    &[(0, -0.9371424300859873), (3, 5.186372428844064), (4, 1.0914373489967295), (5, -8.149787010746927), (6, -18.52006565999696), (7, 22.739487099350505), (8, 2.4936055526796523), (9, -3.0467644718982196)],
    &[(0, 2.273310147516538), (3, -10.53449546673725), (4, -2.0008720582248625), (5, -17.9589318631188), (6, 27.94888452941996), (7, -2.8589982771350235), (8, -8.87285693353063), (9, 12.360567175794303), (10, 0.6433927460157636)],
    &[(0, 0.054293734116568765), (5, 4.450312892752409), (6, 1.8915178993145003), (7, -5.801203960010585), (8, 0.3111643669578199), (9, -0.1521609496625161), (10, 0.20136540080403034), (11, 0.04471061572777259)],
    &[(0, 0.056167502283047954), (6, 0.25350021021662483), (7, -0.2462390374708025), (8, -0.12419142326381637), (9, 0.15329179827876568), (10, 0.00820105229563469), (11, 0.007567897660545699), (12, -0.008298)],
    &[(0, 0.03183464816350214), (5, 0.028300909672366776), (6, 0.053541988307438566), (7, -0.05492374857139099), (10, -0.00010834732869724932), (11, 0.0003825710908356584), (12, -0.00034046500868740456), (13, 0.1413124436746325)],
    &[(0, -0.42889630158379194), (5, -4.697621415361164), (6, 7.683421196062599), (7, 4.06898981839711), (8, 0.3567271874552811), (12, -0.0013990241651590145), (13, 2.9475147891527724), (14, -9.15095847217987)],
];
const E3: [(usize, f64); 8] = [(0, -0.18980075407240762), (5, 4.450312892752409), (6, 1.8915178993145003), (7, -5.801203960010585), (8, -0.4226823213237919), (9, -0.1521609496625161), (10, 0.20136540080403034), (11, 0.02265179219836082)];
const E5: [(usize, f64); 8] = [(0, 0.01312004499419488), (5, -1.2251564463762044), (6, -0.4957589496572502), (7, 1.6643771824549864), (8, -0.35032884874997366), (9, 0.3341791187130175), (10, 0.08192320648511571), (11, -0.022355307863886294)];
const D: [&[(usize, f64)]; 4] = [
    &[(0, -8.428938276109013), (5, 0.5667149535193777), (6, -3.0689499459498917), (7, 2.38466765651207), (8, 2.117034582445028), (9, -0.871391583777973), (10, 2.2404374302607883), (11, 0.6315787787694688), (12, -0.08899033645133331), (13, 18.148505520854727), (14, -9.194632392478356), (15, -4.436036387594894)],
    &[(0, 10.427508642579134), (5, 242.28349177525817), (6, 165.20045171727028), (7, -374.5467547226902), (8, -22.113666853125306), (9, 7.733432668472264), (10, -30.674084731089398), (11, -9.332130526430229), (12, 15.697238121770845), (13, -31.139403219565178), (14, -9.35292435884448), (15, 35.81684148639408)],
    &[(0, 19.985053242002433), (5, -387.0373087493518), (6, -189.17813819516758), (7, 527.8081592054236), (8, -11.57390253995963), (9, 6.8812326946963), (10, -1.0006050966910838), (11, 0.7777137798053443), (12, -2.778205752353508), (13, -60.19669523126412), (14, 84.32040550667716), (15, 11.99229113618279)],
    &[(0, -25.69393346270375), (5, -154.18974869023643), (6, -231.5293791760455), (7, 357.6391179106141), (8, 93.40532418362432), (9, -37.45832313645163), (10, 104.0996495089623), (11, 29.8402934266605), (12, -43.53345659001114), (13, 96.32455395918828), (14, -39.17726167561544), (15, -149.72683625798564)],
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.333;
const FAC_MAX: f64 = 6.0;

#[inline(always)]
fn combine<const N: usize>(y: &[f64; N], h: f64, row: &[(usize, f64)], k: &[[f64; N]]) -> [f64; N] {
    let mut out = *y;
    for &(j, a) in row {
        let ha = h * a;
        for i in 0..N {
            out[i] += ha * k[j][i];
        }
    }
    out
}

/// Interpolant of order 7 valid over one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct DenseSegment<const N: usize> {
    pub t_start: f64,
    pub h: f64,
    y_start: [f64; N],
    coeffs: [[f64; N]; 7],
}

impl<const N: usize> DenseSegment<N> {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.h
    }

    /// Evaluates at normalized position `theta ∈ [0, 1]` within the step.
    pub fn eval_theta(&self, theta: f64) -> [f64; N] {
        let t1 = 1.0 - theta;
        let f = &self.coeffs;
        std::array::from_fn(|i| {
            let mut acc = f[6][i] * theta;
            acc = (acc + f[5][i]) * t1;
            acc = (acc + f[4][i]) * theta;
            acc = (acc + f[3][i]) * t1;
            acc = (acc + f[2][i]) * theta;
            acc = (acc + f[1][i]) * t1;
            acc = (acc + f[0][i]) * theta;
            self.y_start[i] + acc
        })
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        self.eval_theta((t - self.t_start) / self.h)
    }

    pub fn time_at(&self, theta: f64) -> f64 {
        self.t_start + theta * self.h
    }
}

/// Endpoint data of the last accepted step; enough for a cubic Hermite
/// estimate without extra right-hand-side evaluations.
#[derive(Debug, Clone, Copy)]
pub struct StepEnds<const N: usize> {
    pub t_start: f64,
    pub h: f64,
    pub y_start: [f64; N],
    pub y_end: [f64; N],
    pub f_start: [f64; N],
    pub f_end: [f64; N],
}

impl<const N: usize> StepEnds<N> {
    /// Cubic Hermite estimate of component `i` at `theta`.
    pub fn hermite(&self, i: usize, theta: f64) -> f64 {
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y_start[i] + h10 * self.h * self.f_start[i] + h01 * self.y_end[i] + h11 * self.h * self.f_end[i]
    }
}

/// Stateful adaptive stepper for an autonomous system.
pub struct Solver<'a, S, const N: usize> {
    system: &'a S,
    cfg: IntegratorConfig,
    t: f64,
    y: [f64; N],
    f: [f64; N],
    h: f64,
    k: [[f64; N]; 16],
    ends: StepEnds<N>,
    segment: Option<DenseSegment<N>>,
    accepted: usize,
    rejected: usize,
}

impl<'a, S: OdeSystem<N>, const N: usize> Solver<'a, S, N> {
    pub fn new(system: &'a S, t0: f64, y0: [f64; N], cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if y0.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { tau: t0, state: y0.to_vec() });
        }
        let f = system.rhs(&y0);
        Ok(Self {
            system,
            cfg,
            t: t0,
            y: y0,
            f,
            h: cfg.initial_step.min(cfg.max_step),
            k: [[0.0; N]; 16],
            ends: StepEnds { t_start: t0, h: 0.0, y_start: y0, y_end: y0, f_start: f, f_end: f },
            segment: None,
            accepted: 0,
            rejected: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; N] {
        &self.y
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    /// Endpoints of the last accepted step.
    pub fn ends(&self) -> &StepEnds<N> {
        &self.ends
    }

    /// Continuous extension over the last accepted step. Costs three extra
    /// right-hand-side evaluations the first time it is requested per step.
    pub fn segment(&mut self) -> &DenseSegment<N> {
        if self.segment.is_none() {
            let StepEnds { t_start, h, y_start, y_end, f_start, f_end } = self.ends;
            for s in 13..16 {
                let ys = combine(&y_start, h, A[s], &self.k);
                self.k[s] = self.system.rhs(&ys);
            }
            let mut coeffs = [[0.0; N]; 7];
            for i in 0..N {
                let dy = y_end[i] - y_start[i];
                coeffs[0][i] = dy;
                coeffs[1][i] = h * f_start[i] - dy;
                coeffs[2][i] = 2.0 * dy - h * (f_end[i] + f_start[i]);
            }
            for (row, d) in D.iter().enumerate() {
                for &(j, a) in d.iter() {
                    for i in 0..N {
                        coeffs[3 + row][i] += h * a * self.k[j][i];
                    }
                }
            }
            self.segment = Some(DenseSegment { t_start, h, y_start, coeffs });
        }
        self.segment.as_ref().expect("segment just computed")
    }

    /// Replaces the current state, keeping the time and step size.
    pub fn reset_state(&mut self, y: [f64; N]) {
        self.y = y;
        self.f = self.system.rhs(&y);
    }

    /// Takes one accepted step, never stepping past `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        let remaining = t_limit - self.t;
        if remaining <= 0.0 {
            return Err(Error::domain(format!(
                "step requested past limit: t = {}, limit = {t_limit}",
                self.t
            )));
        }
        let sys = self.system;
        let y = self.y;
        loop {
            let mut h = self.h.min(self.cfg.max_step);
            let mut last = false;
            if h >= remaining {
                h = remaining;
                last = true;
            } else if h > 0.5 * remaining {
                // Two comparable steps instead of one long and one tiny.
                h = 0.5 * remaining;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { tau: self.t, step: h, state: y.to_vec() });
            }

            self.k[0] = self.f;
            for s in 1..STAGES {
                let ys = combine(&y, h, A[s], &self.k);
                self.k[s] = sys.rhs(&ys);
            }
            let y_new = combine(&y, h, A[STAGES], &self.k);
            let f_new = sys.rhs(&y_new);
            self.k[STAGES] = f_new;

            let mut err5_sq = 0.0;
            let mut err3_sq = 0.0;
            let mut finite = true;
            for i in 0..N {
                let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(y_new[i].abs());
                let e5: f64 = E5.iter().map(|&(j, a)| a * self.k[j][i]).sum();
                let e3: f64 = E3.iter().map(|&(j, a)| a * self.k[j][i]).sum();
                err5_sq += (e5 / sc) * (e5 / sc);
                err3_sq += (e3 / sc) * (e3 / sc);
                finite &= y_new[i].is_finite() && f_new[i].is_finite();
            }
            let err = if err5_sq == 0.0 && err3_sq == 0.0 {
                0.0
            } else {
                h * err5_sq / ((err5_sq + 0.01 * err3_sq) * N as f64).sqrt()
            };
            if !finite || !err.is_finite() {
                if h < 1e-6 {
                    return Err(Error::NonFinite { tau: self.t, state: y.to_vec() });
                }
                self.h = h * FAC_MIN;
                self.rejected += 1;
                continue;
            }

            if err <= 1.0 {
                let fac = if err == 0.0 { FAC_MAX } else { (SAFETY * err.powf(-0.125)).clamp(FAC_MIN, FAC_MAX) };
                self.ends = StepEnds { t_start: self.t, h, y_start: y, y_end: y_new, f_start: self.f, f_end: f_new };
                self.segment = None;
                self.t = if last { t_limit } else { self.t + h };
                self.y = y_new;
                self.f = f_new;
                let proposal = h * fac;
                // A step clipped to land on the limit says little about the
                // natural step size.
                self.h = if last { proposal.max(self.h) } else { proposal };
                self.accepted += 1;
                return Ok(());
            }
            self.h = h * (SAFETY * err.powf(-0.125)).max(0.2);
            self.rejected += 1;
        }
    }

    /// Advances exactly to `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}

/// Takes one step of size `h` without error control. Used to check the
/// order of the scheme.
pub fn fixed_step<S: OdeSystem<N>, const N: usize>(system: &S, y: &[f64; N], h: f64) -> [f64; N] {
    let mut k = [[0.0; N]; 16];
    k[0] = system.rhs(y);
    for s in 1..STAGES {
        k[s] = system.rhs(&combine(y, h, A[s], &k));
    }
    combine(y, h, A[STAGES], &k)
}

/// Equations of motion as an [`OdeSystem`]. With `reversed` set the flow
/// runs backwards in τ.
#[derive(Debug, Clone, Copy)]
pub struct AtomFlow {
    pub params: SystemParams,
    pub reversed: bool,
}

impl AtomFlow {
    pub fn new(params: SystemParams) -> Self {
        Self { params, reversed: false }
    }

    pub fn backward(params: SystemParams) -> Self {
        Self { params, reversed: true }
    }
}

impl OdeSystem<5> for AtomFlow {
    #[inline]
    fn rhs(&self, y: &[f64; 5]) -> [f64; 5] {
        let d = derivatives(&AtomState::from_array(*y), &self.params);
        if self.reversed {
            d.map(|c| -c)
        } else {
            d
        }
    }
}

/// State and tangent propagated together: `y = (x, p, u, v, z, dx, dp, du, dv, dz)`.
#[derive(Debug, Clone, Copy)]
pub struct TangentFlow {
    pub params: SystemParams,
    pub reversed: bool,
}

impl TangentFlow {
    pub fn new(params: SystemParams) -> Self {
        Self { params, reversed: false }
    }

    pub fn backward(params: SystemParams) -> Self {
        Self { params, reversed: true }
    }

    pub fn pack(s: &AtomState, t: &TangentVector) -> [f64; 10] {
        let (a, b) = (s.to_array(), t.to_array());
        std::array::from_fn(|i| if i < 5 { a[i] } else { b[i - 5] })
    }

    pub fn unpack(y: &[f64; 10]) -> (AtomState, TangentVector) {
        (
            AtomState::from_array([y[0], y[1], y[2], y[3], y[4]]),
            TangentVector::from_array([y[5], y[6], y[7], y[8], y[9]]),
        )
    }
}

impl OdeSystem<10> for TangentFlow {
    #[inline]
    fn rhs(&self, y: &[f64; 10]) -> [f64; 10] {
        let (s, t) = Self::unpack(y);
        let (ds, dt) = joint_derivatives(&s, &t, &self.params);
        let sign = if self.reversed { -1.0 } else { 1.0 };
        std::array::from_fn(|i| sign * if i < 5 { ds[i] } else { dt[i - 5] })
    }
}

/// How [`integrate`] stores its output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every `n`-th accepted step (plus both endpoints).
    Stride(usize),
    /// Interpolated onto a uniform grid with this spacing (plus the endpoint).
    Dense(f64),
}

/// Time series produced by [`integrate`], with invariant drift diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<(f64, AtomState)>,
    /// `max |W(τ) − W(0)|` over the stored samples.
    pub energy_drift: f64,
    /// `max |u²+v²+z² − 1|` over the stored samples.
    pub bloch_drift: f64,
    pub step_count: usize,
}

impl Trajectory {
    fn from_samples(samples: Vec<(f64, AtomState)>, params: &SystemParams, step_count: usize) -> Self {
        let w0 = samples.first().map_or(0.0, |(_, s)| total_energy(s, params));
        let mut energy_drift = 0.0f64;
        let mut bloch_drift = 0.0f64;
        for (_, s) in &samples {
            energy_drift = energy_drift.max((total_energy(s, params) - w0).abs());
            bloch_drift = bloch_drift.max((bloch_norm(s) - 1.0).abs());
        }
        Self { samples, energy_drift, bloch_drift, step_count }
    }

    pub fn final_state(&self) -> AtomState {
        self.samples.last().expect("trajectory always holds the initial sample").1
    }

    pub fn final_tau(&self) -> f64 {
        self.samples.last().map_or(0.0, |(t, _)| *t)
    }
}

fn check_start(s0: &AtomState, tau_end: f64) -> Result<()> {
    if !(tau_end > 0.0 && tau_end.is_finite()) {
        return Err(Error::InvalidParameter {
            field: "tau_end",
            reason: format!("integration horizon must be positive, got {tau_end}"),
        });
    }
    if !s0.is_finite() {
        return Err(Error::InvalidState(format!("non-finite initial state {s0:?}")));
    }
    let r = bloch_norm(s0);
    if (r - 1.0).abs() > BLOCH_TOLERANCE {
        return Err(Error::InvalidState(format!("initial Bloch norm {r} is not 1")));
    }
    Ok(())
}

/// Integrates the equations of motion over `[0, tau_end]`.
pub fn integrate(
    s0: &AtomState,
    params: &SystemParams,
    tau_end: f64,
    cfg: &IntegratorConfig,
    sampling: Sampling,
) -> Result<Trajectory> {
    integrate_flow(&AtomFlow::new(*params), s0, params, tau_end, cfg, sampling)
}

/// Integrates backwards: the sample at elapsed time `s` is the state at `τ = −s`.
pub fn integrate_backward(
    s0: &AtomState,
    params: &SystemParams,
    duration: f64,
    cfg: &IntegratorConfig,
    sampling: Sampling,
) -> Result<Trajectory> {
    integrate_flow(&AtomFlow::backward(*params), s0, params, duration, cfg, sampling)
}

fn integrate_flow(
    flow: &AtomFlow,
    s0: &AtomState,
    params: &SystemParams,
    tau_end: f64,
    cfg: &IntegratorConfig,
    sampling: Sampling,
) -> Result<Trajectory> {
    check_start(s0, tau_end)?;
    if let Sampling::Dense(dt) = sampling {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "sampling",
                reason: format!("dense sampling interval must be positive, got {dt}"),
            });
        }
    }
    let mut solver = Solver::new(flow, 0.0, s0.to_array(), *cfg)?;
    let mut samples = vec![(0.0, *s0)];
    let mut next_grid = 1usize;
    while solver.t() < tau_end {
        solver.step(tau_end)?;
        match sampling {
            Sampling::Stride(n) => {
                if solver.accepted_steps() % n.max(1) == 0 || solver.t() >= tau_end {
                    samples.push((solver.t(), AtomState::from_array(*solver.y())));
                }
            }
            Sampling::Dense(dt) => {
                let t_now = solver.t();
                if (next_grid as f64 * dt) < t_now.min(tau_end) {
                    let seg = *solver.segment();
                    loop {
                        let tg = next_grid as f64 * dt;
                        if tg >= t_now || tg >= tau_end {
                            break;
                        }
                        samples.push((tg, AtomState::from_array(seg.eval(tg))));
                        next_grid += 1;
                    }
                }
                if solver.t() >= tau_end {
                    samples.push((solver.t(), AtomState::from_array(*solver.y())));
                }
            }
        }
    }
    Ok(Trajectory::from_samples(samples, params, solver.accepted_steps()))
}

/// Tangent norms recorded at renormalization checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentTrace {
    /// `(τ, |δ(τ)|)` with the tangent rescaled to unit norm after each entry.
    pub checkpoints: Vec<(f64, f64)>,
    /// Tangent direction at the end of the run (unit norm).
    pub final_tangent: TangentVector,
}

impl TangentTrace {
    /// `ln |δ(τ)| / |δ(0)|` accumulated over all checkpoints.
    pub fn log_growth(&self) -> f64 {
        self.checkpoints.iter().map(|(_, g)| g.ln()).sum()
    }

    /// Running log growth at each checkpoint.
    pub fn cumulative_log_growth(&self) -> Vec<(f64, f64)> {
        let mut acc = 0.0;
        self.checkpoints
            .iter()
            .map(|&(t, g)| {
                acc += g.ln();
                (t, acc)
            })
            .collect()
    }
}

/// Propagates state and tangent together, renormalizing the tangent to unit
/// length every `renorm_interval` (and at `tau_end`). The initial tangent is
/// normalized first; growth factors are relative to unit length.
pub fn integrate_with_tangent(
    s0: &AtomState,
    t0: &TangentVector,
    params: &SystemParams,
    tau_end: f64,
    renorm_interval: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, TangentTrace)> {
    propagate_tangent(&TangentFlow::new(*params), s0, t0, params, tau_end, renorm_interval, cfg)
}

/// As [`integrate_with_tangent`], running the flow backwards in τ.
pub fn integrate_with_tangent_backward(
    s0: &AtomState,
    t0: &TangentVector,
    params: &SystemParams,
    duration: f64,
    renorm_interval: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, TangentTrace)> {
    propagate_tangent(&TangentFlow::backward(*params), s0, t0, params, duration, renorm_interval, cfg)
}

fn propagate_tangent(
    flow: &TangentFlow,
    s0: &AtomState,
    t0: &TangentVector,
    params: &SystemParams,
    tau_end: f64,
    renorm_interval: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, TangentTrace)> {
    check_start(s0, tau_end)?;
    if t0.is_zero() || !t0.norm().is_finite() {
        return Err(Error::InvalidParameter {
            field: "tangent",
            reason: "initial tangent vector must be nonzero and finite".into(),
        });
    }
    if !(renorm_interval > 0.0 && renorm_interval.is_finite()) {
        return Err(Error::InvalidParameter {
            field: "renorm_interval",
            reason: format!("must be positive, got {renorm_interval}"),
        });
    }
    let unit = t0.scaled(1.0 / t0.norm());
    let mut solver = Solver::new(flow, 0.0, TangentFlow::pack(s0, &unit), *cfg)?;
    let mut samples = vec![(0.0, *s0)];
    let mut checkpoints = Vec::new();
    let mut k = 1usize;
    let mut tangent = unit;
    while solver.t() < tau_end {
        let target = (k as f64 * renorm_interval).min(tau_end);
        solver.advance_to(target)?;
        let (s, t) = TangentFlow::unpack(solver.y());
        let norm = t.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonFinite { tau: solver.t(), state: solver.y().to_vec() });
        }
        tangent = t.scaled(1.0 / norm);
        checkpoints.push((solver.t(), norm));
        samples.push((solver.t(), s));
        solver.reset_state(TangentFlow::pack(&s, &tangent));
        k += 1;
    }
    let traj = Trajectory::from_samples(samples, params, solver.accepted_steps());
    Ok((traj, TangentTrace { checkpoints, final_tangent: tangent }))
}

/// Which sign changes of a crossing function are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDirection {
    #[default]
    Any,
    /// Function goes from negative to positive.
    Up,
    /// Function goes from positive to negative.
    Down,
}

impl CrossingDirection {
    fn accepts(self, rising: bool) -> bool {
        match self {
            CrossingDirection::Any => true,
            CrossingDirection::Up => rising,
            CrossingDirection::Down => !rising,
        }
    }
}

/// A localized root of a crossing function inside one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root<const N: usize> {
    pub tau: f64,
    pub state: [f64; N],
    pub rising: bool,
}

/// Number of sub-intervals each step is split into when bracketing roots,
/// so that a function crossing twice within one step is still seen.
pub const BRACKET_SUBDIVISIONS: usize = 4;

/// Bisects the bracket `[lo, hi]` (in normalized step coordinates) down to
/// machine resolution, then polishes with one secant step.
fn bisect<const N: usize, G: Fn(&[f64; N]) -> f64>(
    seg: &DenseSegment<N>,
    g: &G,
    mut lo: f64,
    mut hi: f64,
    mut g_lo: f64,
    mut g_hi: f64,
) -> f64 {
    // 1e-12 in τ for any step up to 1e3 long.
    for _ in 0..60 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g_mid = g(&seg.eval_theta(mid));
        if g_mid == 0.0 {
            return mid;
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    if g_hi == g_lo {
        return hi;
    }
    let secant = lo - g_lo * (hi - lo) / (g_hi - g_lo);
    let cand = [secant.clamp(lo, hi), lo, hi];
    cand.into_iter()
        .min_by(|a, b| g(&seg.eval_theta(*a)).abs().total_cmp(&g(&seg.eval_theta(*b)).abs()))
        .unwrap_or(hi)
}

/// Finds the roots of `g` inside the step described by `seg`.
///
/// A root sitting exactly on the left end of the step is left to the
/// previous step, so every root is reported once. Tangencies (no sign change)
/// are not roots.
pub fn roots_in_segment<const N: usize, G: Fn(&[f64; N]) -> f64>(
    seg: &DenseSegment<N>,
    g: G,
    direction: CrossingDirection,
    out: &mut Vec<Root<N>>,
) {
    let n = BRACKET_SUBDIVISIONS;
    let mut theta_a = 0.0;
    let mut g_a = g(&seg.eval_theta(0.0));
    for j in 1..=n {
        let theta_b = j as f64 / n as f64;
        let g_b = g(&seg.eval_theta(theta_b));
        let crosses = (g_a < 0.0 && g_b >= 0.0) || (g_a > 0.0 && g_b <= 0.0);
        if crosses {
            let rising = g_a < 0.0;
            if direction.accepts(rising) {
                let theta = if g_b == 0.0 { theta_b } else { bisect(seg, &g, theta_a, theta_b, g_a, g_b) };
                out.push(Root { tau: seg.time_at(theta), state: seg.eval_theta(theta), rising });
            }
        }
        theta_a = theta_b;
        g_a = g_b;
    }
}

/// Cheap screen for [`lattice_crossings_in_segment`]: false only when no
/// multiple of `period` can lie within the range of `y[0]` over the step.
pub fn lattice_crossing_possible<const N: usize>(ends: &StepEnds<N>, period: f64) -> bool {
    let n = BRACKET_SUBDIVISIONS;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=n {
        let x = ends.hermite(0, j as f64 / n as f64);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    // The Hermite estimate is only third order; pad generously.
    let pad = 0.25 * (hi - lo) + 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    ((lo - pad) / period).ceil() <= ((hi + pad) / period).floor()
}

/// Finds passages of the unwrapped coordinate `y[0]` through multiples of
/// `period` within one step.
pub fn lattice_crossings_in_segment<const N: usize>(
    seg: &DenseSegment<N>,
    period: f64,
    direction: CrossingDirection,
    out: &mut Vec<Root<N>>,
) {
    let n = BRACKET_SUBDIVISIONS;
    let xs: Vec<f64> = (0..=n).map(|j| seg.eval_theta(j as f64 / n as f64)[0]).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k_lo = (lo / period).ceil() as i64;
    let k_hi = (hi / period).floor() as i64;
    if k_lo > k_hi {
        return;
    }
    let start = out.len();
    for k in k_lo..=k_hi {
        let target = k as f64 * period;
        roots_in_segment(seg, |y: &[f64; N]| y[0] - target, direction, out);
    }
    out[start..].sort_by(|a, b| a.tau.total_cmp(&b.tau));
}

/// State at a passage through `x ≡ 0 (mod 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub tau: f64,
    pub state: AtomState,
    /// `true` when x was increasing.
    pub rising: bool,
}

/// Integrates from `s0` and reports every passage through the section
/// `cos x = 1` for `τ ∈ (0, tau_end]`, ordered in τ.
pub fn find_crossings(
    s0: &AtomState,
    params: &SystemParams,
    tau_end: f64,
    cfg: &IntegratorConfig,
    direction: CrossingDirection,
) -> Result<Vec<Crossing>> {
    find_crossings_limited(s0, params, tau_end, usize::MAX, cfg, direction)
}

/// As [`find_crossings`], stopping as soon as `max_count` crossings are found.
pub fn find_crossings_limited(
    s0: &AtomState,
    params: &SystemParams,
    tau_end: f64,
    max_count: usize,
    cfg: &IntegratorConfig,
    direction: CrossingDirection,
) -> Result<Vec<Crossing>> {
    check_start(s0, tau_end)?;
    let flow = AtomFlow::new(*params);
    let mut solver = Solver::new(&flow, 0.0, s0.to_array(), *cfg)?;
    let mut roots = Vec::new();
    while solver.t() < tau_end && roots.len() < max_count {
        solver.step(tau_end)?;
        if lattice_crossing_possible(solver.ends(), std::f64::consts::TAU) {
            lattice_crossings_in_segment(solver.segment(), std::f64::consts::TAU, direction, &mut roots);
        }
    }
    roots.truncate(max_count);
    Ok(roots
        .into_iter()
        .map(|r| Crossing { tau: r.tau, state: AtomState::from_array(r.state), rising: r.rising })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    struct Harmonic;
    impl OdeSystem<2> for Harmonic {
        fn rhs(&self, y: &[f64; 2]) -> [f64; 2] {
            [y[1], -y[0]]
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let cfg = IntegratorConfig::with_tolerance(1e-12);
        let mut solver = Solver::new(&Harmonic, 0.0, [1.0, 0.0], cfg).unwrap();
        solver.advance_to(20.0).unwrap();
        assert_eq!(solver.t(), 20.0);
        let y = solver.y();
        assert!((y[0] - 20f64.cos()).abs() < 1e-10, "{y:?}");
        assert!((y[1] + 20f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let cfg = IntegratorConfig { max_step: 0.5, ..IntegratorConfig::with_tolerance(1e-10) };
        let mut solver = Solver::new(&Harmonic, 0.0, [1.0, 0.0], cfg).unwrap();
        let mut worst = 0.0f64;
        while solver.t() < 10.0 {
            solver.step(10.0).unwrap();
            let seg = *solver.segment();
            let end = seg.eval_theta(1.0);
            for (a, b) in end.iter().zip(solver.y()) {
                assert!((a - b).abs() <= 1e-14);
            }
            for j in 0..=10 {
                let t = seg.time_at(j as f64 / 10.0);
                worst = worst.max((seg.eval(t)[0] - t.cos()).abs());
            }
        }
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn fixed_step_order_is_eight() {
        let y0 = [1.0, 0.0];
        let run = |h: f64| {
            let n = (2.0 / h).round() as usize;
            let mut y = y0;
            for _ in 0..n {
                y = fixed_step(&Harmonic, &y, h);
            }
            (y[0] - 2f64.cos()).abs()
        };
        let (e1, e2) = (run(0.5), run(0.25));
        let order = (e1 / e2).log2();
        assert!(order > 7.5 && order < 8.7, "observed order {order}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = SystemParams::new(1e-5, 0.0).unwrap();
        let s0 = AtomState::new(0.0, 10.0, 0.0, 0.0, 1.0).unwrap();
        let cfg = IntegratorConfig::precise();
        assert!(integrate(&s0, &params, 0.0, &cfg, Sampling::Stride(1)).is_err());
        assert!(integrate(&s0, &params, -1.0, &cfg, Sampling::Stride(1)).is_err());
        let off = AtomState::new_unchecked(0.0, 10.0, 0.0, 0.5, 1.0);
        assert!(integrate(&off, &params, 1.0, &cfg, Sampling::Stride(1)).is_err());
        let bad = IntegratorConfig { rel_tol: 0.5, ..cfg };
        assert!(integrate(&s0, &params, 1.0, &bad, Sampling::Stride(1)).is_err());
        let t0 = TangentVector::new(0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(integrate_with_tangent(&s0, &t0, &params, 1.0, 1.0, &cfg).is_err());
    }

    struct Blowup;
    impl OdeSystem<1> for Blowup {
        fn rhs(&self, y: &[f64; 1]) -> [f64; 1] {
            [y[0] * y[0]]
        }
    }

    #[test]
    fn finite_time_blowup_aborts() {
        let mut solver = Solver::new(&Blowup, 0.0, [1.0], IntegratorConfig::precise()).unwrap();
        let err = solver.advance_to(2.0).unwrap_err();
        assert!(
            matches!(err, Error::StepSizeUnderflow { .. } | Error::NonFinite { .. }),
            "{err:?}"
        );
        assert!(solver.t() < 1.0 + 1e-6);
    }

    #[test]
    fn uniform_motion_at_zero_dipole() {
        let params = SystemParams::new(1e-5, 0.0).unwrap();
        let s0 = AtomState::new(0.0, 1000.0, 0.0, 0.6, 0.8).unwrap();
        let traj = integrate(&s0, &params, 5000.0, &IntegratorConfig::precise(), Sampling::Dense(50.0)).unwrap();
        for (t, s) in &traj.samples {
            assert!((s.x - 1e-2 * t).abs() <= 1e-12 * t.max(1.0));
            assert_eq!(s.p, 1000.0);
            assert_eq!(s.u, 0.0);
        }
        assert_eq!(traj.samples.len(), 101);
        assert!(traj.samples.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn ballistic_crossings_are_uniformly_spaced() {
        let params = SystemParams::new(1e-5, 0.0).unwrap();
        let s0 = AtomState::new(0.0, 1000.0, 0.0, 0.0, -1.0).unwrap();
        let period = TAU / (1e-5 * 1000.0);
        let cr = find_crossings(&s0, &params, 5.5 * period, &IntegratorConfig::precise(), CrossingDirection::Any)
            .unwrap();
        assert_eq!(cr.len(), 5);
        for (k, c) in cr.iter().enumerate() {
            let want = (k + 1) as f64 * period;
            assert!((c.tau - want).abs() < 1e-8 * want, "{} vs {want}", c.tau);
            assert!((c.state.x.cos() - 1.0).abs() <= 1e-10);
            assert!(c.rising);
        }
        let down = find_crossings(&s0, &params, 5.5 * period, &IntegratorConfig::precise(), CrossingDirection::Down)
            .unwrap();
        assert!(down.is_empty());
    }

    #[test]
    fn integration_is_deterministic() {
        let params = SystemParams::new(1e-5, -0.05).unwrap();
        let s0 = AtomState::new(0.0, 300.0, 0.0, 0.0, -1.0).unwrap();
        let a = integrate(&s0, &params, 500.0, &IntegratorConfig::precise(), Sampling::Stride(7)).unwrap();
        let b = integrate(&s0, &params, 500.0, &IntegratorConfig::precise(), Sampling::Stride(7)).unwrap();
        assert_eq!(a, b);
    }
}
