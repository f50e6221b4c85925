//! One PASS/FAIL line per acceptance criterion.

mod support;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::time::Instant;

use atom_lattice::analytic::{
    critical_momentum, doppler_rabi_inversion, DopplerFrame, ResonantInversion, ResonantOrbit,
};
use atom_lattice::chaos::{max_lyapunov, LyapunovSettings};
use atom_lattice::executor::Sequential;
use atom_lattice::fractal::{
    box_counting_dimension, cantor_points, count_transitions, exit_time_scan, linspace, refinement_cascade,
    singular_set, smooth_runs, unresolved_intervals, CavitySpec, ExitRecord, ScanSettings,
};
use atom_lattice::integrator::integrate;
use atom_lattice::poincare::{
    fibonacci_bloch_family, poincare_map, project, radial_dispersion, shell_initial_conditions, EnergyShell,
    Hemisphere, Plane, SectionPoint, SectionSettings,
};
use atom_lattice::specfun::{complete_elliptic_k, jacobi_am, jacobi_sn_cn_dn};
use atom_lattice::{AtomState, IntegratorConfig, Sampling, SystemParams};

type Outcome = (bool, String);

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("conservation", conservation),
        ("elliptic oracle", elliptic_oracle),
        ("trapping threshold", trapping_threshold),
        ("energy shells", energy_shells),
        ("Doppler-Rabi", doppler_rabi),
        ("Lyapunov dichotomy", lyapunov_dichotomy),
        ("Poincaré structure", poincare_structure),
        ("exit-time fractal", exit_time_fractal),
        ("box counting", box_counting),
        ("special functions", special_functions),
        ("variational flow", variational_flow),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        failed += usize::from(!ok);
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {detail} ({:.1} s)", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
}

fn conservation() -> Outcome {
    let (s0, p) = support::wandering();
    let tr = integrate(&s0, &p, 1e4, &IntegratorConfig::precise(), Sampling::Stride(1)).unwrap();
    let ok = tr.energy_drift <= 1e-6 && tr.bloch_drift <= 1e-8;
    (ok, format!("|ΔW| = {:.1e}, |Δ(u²+v²+z²)| = {:.1e}", tr.energy_drift, tr.bloch_drift))
}

/// Worst relative (x, p) error and absolute z error against the closed forms.
fn resonant_mismatch(p0: f64, u0: f64, v0: f64, z0: f64) -> (f64, f64, f64) {
    let omega_r = 1e-5;
    let s0 = AtomState::new(0.0, p0, u0, v0, z0).unwrap();
    let params = SystemParams::new(omega_r, 0.0).unwrap();
    let tr = integrate(&s0, &params, 1e4, &IntegratorConfig::precise(), Sampling::Dense(25.0)).unwrap();
    let orbit = ResonantOrbit::new(p0, u0, omega_r).unwrap();
    let inv = ResonantInversion::new(orbit, v0, z0).unwrap();
    let x_scale = tr.samples.iter().map(|(_, s)| s.x.abs()).fold(1.0, f64::max);
    let p_scale = tr.samples.iter().map(|(_, s)| s.p.abs()).fold(0.0, f64::max);
    let (mut ex, mut ep, mut ez) = (0.0f64, 0.0f64, 0.0f64);
    for (t, s) in &tr.samples {
        let (x, p) = orbit.position_momentum(*t).unwrap();
        ex = ex.max((s.x - x).abs() / x_scale);
        ep = ep.max((s.p - p).abs() / p_scale);
        ez = ez.max((s.z - inv.at(*t).unwrap()).abs());
    }
    (ex, ep, ez)
}

fn elliptic_oracle() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    // u0 = 1 cases from the criterion, then tilted Bloch vectors so that z moves.
    for (p0, u0, v0, z0) in [(200.0, 1.0, 0.0, 0.0), (5000.0, 1.0, 0.0, 0.0), (200.0, 0.6, 0.0, -0.8), (5000.0, 0.6, 0.48, -0.64)] {
        let (ex, ep, ez) = resonant_mismatch(p0, u0, v0, z0);
        worst = (worst.0.max(ex), worst.1.max(ep), worst.2.max(ez));
    }
    let ok = worst.0 <= 1e-6 && worst.1 <= 1e-6 && worst.2 <= 1e-6;
    (ok, format!("worst x {:.1e}, p {:.1e}, z {:.1e}", worst.0, worst.1, worst.2))
}

fn trapping_threshold() -> Outcome {
    let omega_r = 1e-5;
    let p_cr = critical_momentum(1.0, omega_r).unwrap();
    let params = SystemParams::new(omega_r, 0.0).unwrap();
    let cfg = IntegratorConfig::precise();
    let below = integrate(&AtomState::new(0.0, 0.999 * p_cr, 1.0, 0.0, 0.0).unwrap(), &params, 1e5, &cfg, Sampling::Stride(1)).unwrap();
    let reach = below.samples.iter().map(|(_, s)| s.x.abs()).fold(0.0, f64::max);
    let above = integrate(&AtomState::new(0.0, 1.001 * p_cr, 1.0, 0.0, 0.0).unwrap(), &params, 1e5, &cfg, Sampling::Stride(1)).unwrap();
    let monotone = above.samples.windows(2).all(|w| w[1].1.x > w[0].1.x);
    let ok = (p_cr - 632.456).abs() < 1e-3 && reach < PI && monotone;
    (ok, format!("p_cr = {p_cr:.3}, max |x| below = {reach:.3}, monotone escape above = {monotone}"))
}

fn energy_shells() -> Outcome {
    let params = SystemParams::new(1e-5, -0.05).unwrap();
    let mut worst = 0.0f64;
    let mut ok = true;
    for (p_eff, w) in [(2600.0, 33.8), (2700.0, 36.45)] {
        let shell = EnergyShell::from_momentum(p_eff, params);
        ok &= (shell.energy - w).abs() <= 1e-12 * w;
        let fam = shell_initial_conditions(&shell, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.6, 0.8, 0.0]], FRAC_PI_2);
        ok &= fam.accepted.len() == 3;
        for (_, s) in &fam.accepted {
            worst = worst.max((s.p - p_eff).abs() / p_eff);
        }
    }
    ok &= worst <= 1e-12;
    (ok, format!("W = 33.8 and 36.45 reproduced, worst relative p_eff error {worst:.1e}"))
}

/// Mean angular frequency from upward mean crossings, and peak-to-peak range.
fn oscillation(samples: &[(f64, f64)]) -> (f64, f64) {
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let ups: Vec<f64> = samples
        .windows(2)
        .filter(|w| w[0].1 < mean && w[1].1 >= mean)
        .map(|w| w[0].0 + (mean - w[0].1) / (w[1].1 - w[0].1) * (w[1].0 - w[0].0))
        .collect();
    let period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
    let lo = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    (TAU / period, hi - lo)
}

fn doppler_rabi() -> Outcome {
    let params = SystemParams::new(1e-5, -4.0).unwrap();
    let s0 = AtomState::new(0.0, 4e5, 0.0, 0.0, -1.0).unwrap();
    let frame = DopplerFrame::new(&params, s0.p);
    let tr = integrate(&s0, &params, 200.0, &IntegratorConfig::precise(), Sampling::Dense(0.01)).unwrap();
    let numeric: Vec<(f64, f64)> = tr.samples.iter().map(|(t, s)| (*t, s.z)).collect();
    let predicted: Vec<(f64, f64)> = numeric.iter().map(|(t, _)| (*t, doppler_rabi_inversion(*t, &s0, &frame))).collect();
    let (w, pp) = oscillation(&numeric);
    let (_, pp_an) = oscillation(&predicted);
    let ok = frame.delta2 == 0.0 && (w - 1.0).abs() <= 0.05 && pp >= 0.9 * pp_an;
    (ok, format!("frequency {w:.4}, peak-to-peak {pp:.3} vs predicted {pp_an:.3}"))
}

fn lyapunov_dichotomy() -> Outcome {
    let resonant = SystemParams::new(1e-5, 0.0).unwrap();
    let h = 0.5f64.sqrt();
    let orbits = [
        ("cold free flight p0=200 z0=-1", AtomState::new(0.0, 200.0, 0.0, 0.0, -1.0).unwrap()),
        ("trapped p0=200 u0=1", AtomState::new(0.0, 200.0, 1.0, 0.0, 0.0).unwrap()),
        ("ballistic p0=5000", AtomState::new(0.0, 5000.0, h, 0.0, h).unwrap()),
    ];
    let settings = LyapunovSettings::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s0) in orbits {
        let est = max_lyapunov(&s0, &resonant, &settings).unwrap();
        let pass = est.lambda <= 1e-4;
        ok &= pass;
        parts.push(format!("Δ=0 {name}: {:.2e}{}", est.lambda, if pass { "" } else { " > 1e-4" }));
    }
    let (s0, p) = support::wandering();
    let est = max_lyapunov(&s0, &p, &settings).unwrap();
    let pair = support::pair_lyapunov(&s0, &p, 1e5, 5.0, 1e-9, &IntegratorConfig::coarse());
    let chaotic = est.lambda > 0.0 && est.lambda > 3.0 * est.stderr;
    let agrees = (est.lambda - pair).abs() <= 0.1 * pair;
    ok &= chaotic && agrees;
    parts.push(format!("chaotic {:.2e} ± {:.1e}, pair oracle {pair:.2e}", est.lambda, est.stderr));
    (ok, parts.join("; "))
}

fn curve_dispersion(points: &[&SectionPoint]) -> Option<f64> {
    let owned: Vec<SectionPoint> = points.iter().map(|p| **p).collect();
    let fits: Vec<f64> =
        [Plane::VzWest, Plane::VzEast].into_iter().filter_map(|pl| radial_dispersion(&project(&owned, pl))).collect();
    (!fits.is_empty()).then(|| fits.into_iter().fold(0.0, f64::max))
}

fn poincare_structure() -> Outcome {
    let p = SystemParams::new(1e-5, -0.05).unwrap();
    let shell = EnergyShell::from_momentum(2600.0, p);
    let fam = shell_initial_conditions(&shell, &fibonacci_bloch_family(40), 0.0);
    let settings = SectionSettings { tau_max: 1e6, max_crossings: 200, integrator: IntegratorConfig::precise() };
    let map = poincare_map(&fam.accepted, &shell, &settings, &Sequential).unwrap();
    let on_section = map.points.iter().all(|pt| (pt.x.cos() - 1.0).abs() <= 1e-10 && (pt.x - (pt.x / TAU).round() * TAU).abs() <= 1e-10);
    let energy = map.points.iter().map(|pt| shell.energy_error(&pt.state())).fold(0.0, f64::max);
    let spread = map.points.iter().map(|pt| (pt.p - 2600.0).abs() / 2600.0).fold(0.0, f64::max);
    let tagged = map.points.iter().all(|pt| pt.hemisphere == Hemisphere::of(pt.u));

    let mut dispersions = Vec::new();
    for (id, _) in &fam.accepted {
        let pts: Vec<&SectionPoint> = map.points.iter().filter(|pt| pt.trajectory_id == *id).collect();
        if let Some(d) = curve_dispersion(&pts) {
            dispersions.push((*id, d));
        }
    }
    let islands = dispersions.iter().filter(|(_, d)| *d < 0.01).count();
    // First area-filling trajectory, by descending dispersion, with a
    // significant exponent.
    dispersions.sort_by(|a, b| b.1.total_cmp(&a.1));
    let sea = dispersions.iter().take_while(|(_, d)| *d > 0.1).find_map(|&(id, d)| {
        let s0 = fam.accepted.iter().find(|(i, _)| *i == id).unwrap().1;
        let est = max_lyapunov(&s0, &p, &LyapunovSettings::default()).unwrap();
        (est.lambda > 3.0 * est.stderr).then_some((id, d, est))
    });
    let ok = map.truncated.is_empty()
        && on_section
        && tagged
        && energy <= 1e-6
        && spread <= 0.05
        && islands >= 1
        && sea.is_some();
    let sea_text = match sea {
        Some((id, d, est)) => format!("sea trajectory {id} dispersion {d:.2} λ {:.2e} ± {:.1e}", est.lambda, est.stderr),
        None => "no area-filling trajectory with λ > 3·stderr".into(),
    };
    (
        ok,
        format!(
            "{} points, {islands} closed curves, {sea_text}, max energy error {energy:.1e}, max |p/p_eff − 1| {spread:.3}",
            map.points.len()
        ),
    )
}

fn exit_scan_settings(integrator: IntegratorConfig) -> ScanSettings {
    ScanSettings { omega_r: 1e-5, cavity: CavitySpec { tau_cutoff: 1e5, ..Default::default() }, integrator }
}

fn cold_atom() -> AtomState {
    AtomState::new(0.0, 200.0, 0.0, 0.0, -1.0).unwrap()
}

fn detuning_scan() -> &'static [ExitRecord] {
    static SCAN: std::sync::OnceLock<Vec<ExitRecord>> = std::sync::OnceLock::new();
    SCAN.get_or_init(|| {
        let deltas = linspace(-0.12, 0.12, 601).unwrap();
        exit_time_scan(&deltas, &cold_atom(), &exit_scan_settings(IntegratorConfig::precise()), &Sequential)
    })
}

fn exit_time_fractal() -> Outcome {
    let scan = detuning_scan();
    let runs = smooth_runs(scan, 5);
    let unresolved = unresolved_intervals(scan).len();
    let smooth_m0 = runs.iter().all(|r| scan[r.clone()].iter().all(|x| x.m_minus_1 == 0));
    let intermittent = !runs.is_empty() && unresolved > 1;

    let settings = exit_scan_settings(IntegratorConfig::precise());
    let cascade = refinement_cascade(scan, 3, 10, &cold_atom(), &settings, &Sequential).unwrap();
    let new: Vec<usize> = cascade.iter().map(|r| r.new_transitions).collect();
    let max_m: Vec<u32> = cascade.iter().map(|r| r.max_m_minus_1).collect();
    let cascade_ok = cascade.len() == 3 && new.iter().all(|&n| n > 0);

    // Ten-fold tighter tolerance; the step cap is halved as well because it,
    // not the tolerance, limits the step size at these settings.
    let tight = exit_scan_settings(IntegratorConfig { max_step: 0.0625, ..IntegratorConfig::with_tolerance(1e-11) });
    let smooth: Vec<&ExitRecord> = runs.iter().flat_map(|r| &scan[r.clone()]).collect();
    let deltas: Vec<f64> = smooth.iter().map(|r| r.delta).collect();
    let again = exit_time_scan(&deltas, &cold_atom(), &tight, &Sequential);
    let worst = smooth.iter().zip(&again).map(|(a, b)| (a.exit_time - b.exit_time).abs() / a.exit_time).fold(0.0, f64::max);
    let same_m = smooth.iter().zip(&again).all(|(a, b)| a.m_minus_1 == b.m_minus_1 && a.outcome == b.outcome);

    let ok = intermittent && smooth_m0 && cascade_ok && worst <= 1e-4 && same_m;
    (
        ok,
        format!(
            "{} smooth runs (m−1 = 0: {smooth_m0}), {unresolved} unresolved intervals, {} transitions; zoom levels add {new:?} transitions (max m−1 {max_m:?}); tighter tolerance changes smooth T by ≤ {worst:.1e}, bands kept: {same_m}",
            runs.len(),
            count_transitions(scan)
        ),
    )
}

fn box_counting() -> Outcome {
    let cantor = box_counting_dimension(&cantor_points(10), 1.0 / 3.0, 3f64.powi(-8), 8).unwrap();
    let line: Vec<f64> = (0..4096).map(|i| (i as f64 + 0.5) / 4096.0).collect();
    let uniform = box_counting_dimension(&line, 0.25, 1.0 / 512.0, 8).unwrap();
    let set = singular_set(detuning_scan());
    let singular = box_counting_dimension(&set, 0.03, 0.03 / 32.0, 6);
    let cantor_ok = (cantor.dimension - 2f64.ln() / 3f64.ln()).abs() <= 0.02;
    let uniform_ok = (uniform.dimension - 1.0).abs() <= 0.05;
    let (singular_ok, singular_text) = match singular {
        Ok(d) => (
            d.ci.0 > 0.0 && d.ci.1 < 1.0 && !d.degenerate,
            format!("singular set ({} points) {:.3} CI ({:.3}, {:.3}) R² {:.4}", set.len(), d.dimension, d.ci.0, d.ci.1, d.r_squared),
        ),
        Err(e) => (false, format!("singular set: {e}")),
    };
    (
        cantor_ok && uniform_ok && singular_ok,
        format!("Cantor {:.4}, uniform {:.4}, {singular_text}", cantor.dimension, uniform.dimension),
    )
}

/// Adaptive Simpson rule with a per-length error budget.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol * (b - a) {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol / (b - a), 30)
}

fn special_functions() -> Outcome {
    let mut identity = 0.0f64;
    for i in -200..=200 {
        for j in 0..=100 {
            let (u, k) = (i as f64 * 0.25, j as f64 / 100.0);
            let (s, c, d) = jacobi_sn_cn_dn(u, k).unwrap();
            identity = identity.max((s * s + c * c - 1.0).abs()).max((d * d + k * k * s * s - 1.0).abs());
        }
    }
    let k = 0.8;
    let oracle = simpson(&|t: f64| 1.0 / (1.0 - k * k * t.sin().powi(2)).sqrt(), 0.0, FRAC_PI_2, 1e-14);
    let k_err = (complete_elliptic_k(k).unwrap() - oracle).abs();
    let mut limits = 0.0f64;
    for i in -40..=40 {
        let u = i as f64 * 0.37;
        let (s, c, d) = jacobi_sn_cn_dn(u, 0.0).unwrap();
        limits = limits.max((s - u.sin()).abs()).max((c - u.cos()).abs()).max((d - 1.0).abs());
        let (s, c, d) = jacobi_sn_cn_dn(u, 1.0).unwrap();
        let sech = 1.0 / u.cosh();
        limits = limits.max((s - u.tanh()).abs()).max((c - sech).abs()).max((d - sech).abs());
        limits = limits.max((jacobi_am(u, 1.0).unwrap() - (2.0 * u.exp().atan() - FRAC_PI_2)).abs());
    }
    limits = limits.max((complete_elliptic_k(0.0).unwrap() - FRAC_PI_2).abs());
    let ok = identity <= 1e-12 && k_err <= 1e-12 && limits <= 1e-14;
    (ok, format!("identities {identity:.1e}, K(0.8) error {k_err:.1e}, degenerate limits {limits:.1e}"))
}

fn variational_flow() -> Outcome {
    let worst = support::worst_variational_mismatch(1000, 2024);
    (worst <= 1e-6, format!("worst relative mismatch {worst:.1e} over 1000 states"))
}
