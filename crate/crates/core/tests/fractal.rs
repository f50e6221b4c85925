use atom_lattice::executor::Sequential;
use atom_lattice::fractal::{
    box_counting_dimension, count_transitions, exit_time, exit_time_scan, exit_time_surface, linspace,
    self_similarity_probe, smooth_runs, CavitySpec, ExitOutcome, ExitRecord, ScanSettings,
};
use atom_lattice::{AtomState, IntegratorConfig, SystemParams};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::f64::consts::TAU;
use std::sync::OnceLock;

const OMEGA_R: f64 = 1e-5;

fn cavity(tau_cutoff: f64) -> CavitySpec {
    CavitySpec { tau_cutoff, ..Default::default() }
}

fn settings(tau_cutoff: f64) -> ScanSettings {
    ScanSettings { omega_r: OMEGA_R, cavity: cavity(tau_cutoff), integrator: IntegratorConfig::precise() }
}

/// Cold ground-state atom of the detuning scans.
fn cold(p0: f64) -> AtomState {
    AtomState::new(0.0, p0, 0.0, 0.0, -1.0).unwrap()
}

/// Detuning scan shared by the tests below.
fn coarse_scan() -> &'static [ExitRecord] {
    static SCAN: OnceLock<Vec<ExitRecord>> = OnceLock::new();
    SCAN.get_or_init(|| exit_time_scan(&linspace(-0.12, 0.12, 121).unwrap(), &cold(200.0), &settings(1e5), &Sequential))
}

fn mirrored(outcome: ExitOutcome) -> ExitOutcome {
    match outcome {
        ExitOutcome::LeftDetector => ExitOutcome::RightDetector,
        ExitOutcome::RightDetector => ExitOutcome::LeftDetector,
        other => other,
    }
}

#[test]
fn free_flight_exit_time() {
    let params = SystemParams::new(OMEGA_R, 0.0).unwrap();
    for p0 in [100.0, 700.0, 5000.0] {
        let s0 = AtomState::new(0.0, p0, 0.0, 0.6, 0.8).unwrap();
        let rec = exit_time(&s0, &params, &cavity(1e7), &IntegratorConfig::precise());
        let expected = TAU / (OMEGA_R * p0);
        assert!((rec.exit_time - expected).abs() <= 1e-9 * expected, "{} vs {expected}", rec.exit_time);
        assert_eq!(rec.outcome, ExitOutcome::RightDetector);
        assert_eq!(rec.m_minus_1, 0);
    }
}

#[test]
fn atom_below_critical_momentum_stays_in_first_well() {
    let params = SystemParams::new(OMEGA_R, 0.0).unwrap();
    let s0 = AtomState::new(0.0, 500.0, 1.0, 0.0, 0.0).unwrap();
    let rec = exit_time(&s0, &params, &cavity(1e5), &IntegratorConfig::precise());
    assert_eq!(rec.outcome, ExitOutcome::TrappedAtCutoff);
    assert_eq!(rec.exit_time, 1e5);
    assert!(rec.m_minus_1 > 50, "{}", rec.m_minus_1);
}

#[test]
fn mirrored_atoms_exit_through_opposite_detectors() {
    let deltas = linspace(-0.12, 0.12, 25).unwrap();
    let fwd = exit_time_scan(&deltas, &cold(200.0), &settings(1e5), &Sequential);
    let back = exit_time_scan(&deltas, &cold(-200.0), &settings(1e5), &Sequential);
    for (a, b) in fwd.iter().zip(&back) {
        assert_eq!(b.outcome, mirrored(a.outcome), "Δ = {}", a.delta);
        assert_eq!(a.m_minus_1, b.m_minus_1, "Δ = {}", a.delta);
        assert!((a.exit_time - b.exit_time).abs() <= 1e-9 * a.exit_time, "Δ = {}: {} vs {}", a.delta, a.exit_time, b.exit_time);
    }
}

#[test]
fn longer_cutoff_keeps_finite_exits() {
    let deltas = linspace(-0.12, 0.12, 41).unwrap();
    let short = exit_time_scan(&deltas, &cold(200.0), &settings(1e4), &Sequential);
    let long = exit_time_scan(&deltas, &cold(200.0), &settings(1e5), &Sequential);
    assert!(short.iter().any(|r| r.is_censored()));
    for (s, l) in short.iter().zip(&long) {
        if s.is_censored() {
            assert!(l.exit_time >= s.exit_time);
        } else {
            assert_eq!(s.outcome, l.outcome);
            assert_eq!(s.m_minus_1, l.m_minus_1);
            assert_eq!(s.exit_time, l.exit_time);
        }
    }
}

#[test]
fn scan_alternates_smooth_and_unresolved_stretches() {
    let coarse = coarse_scan();
    assert!(coarse.iter().all(|r| r.error.is_none()));
    let runs = smooth_runs(coarse, 5);
    assert!(!runs.is_empty());
    for run in &runs {
        assert!(coarse[run.clone()].iter().all(|r| r.m_minus_1 == 0), "run {run:?}");
    }
    assert!(count_transitions(coarse) > 10);
    assert!(coarse.iter().any(|r| !r.is_censored() && r.m_minus_1 >= 1));
}

#[test]
fn resonant_stretch_stays_smooth_under_refinement() {
    // Stretches away from resonance that look smooth at this spacing hide
    // narrow bands; the one around Δ = 0 does not.
    let coarse = coarse_scan();
    let run = smooth_runs(coarse, 5).into_iter().find(|r| coarse[r.clone()].iter().any(|x| x.delta.abs() < 1e-12)).unwrap();
    let interval = (coarse[run.start].delta, coarse[run.end - 1].delta);
    let report = self_similarity_probe(coarse, interval, 10, &cold(200.0), &settings(1e5), &Sequential).unwrap();
    assert_eq!(report.coarse_transitions, 0);
    assert_eq!(report.new_transitions, 0);
    assert!(report.unresolved.is_empty());
    assert_eq!(report.max_m_minus_1, 0);
}

#[test]
fn smooth_exit_times_survive_tighter_tolerance() {
    let coarse = coarse_scan();
    let tight = ScanSettings {
        integrator: IntegratorConfig { max_step: 0.0625, ..IntegratorConfig::with_tolerance(1e-11) },
        ..settings(1e5)
    };
    let smooth: Vec<&ExitRecord> = smooth_runs(coarse, 5).into_iter().flat_map(|r| &coarse[r]).collect();
    let deltas: Vec<f64> = smooth.iter().map(|r| r.delta).collect();
    let again = exit_time_scan(&deltas, &cold(200.0), &tight, &Sequential);
    for (a, b) in smooth.iter().zip(&again) {
        assert_eq!(a.m_minus_1, b.m_minus_1);
        assert_eq!(a.outcome, b.outcome);
        assert!((a.exit_time - b.exit_time).abs() <= 1e-4 * a.exit_time, "Δ = {}: {} vs {}", a.delta, a.exit_time, b.exit_time);
    }
}

#[test]
fn surface_is_smooth_for_fast_atoms_and_at_resonance() {
    let settings = ScanSettings { omega_r: 9.17e-5, ..settings(1e5) };
    let deltas = linspace(-0.3, 0.3, 13).unwrap();
    let p0s = [300.0, 600.0, 2000.0, 4000.0];
    let surface = exit_time_surface(&deltas, &p0s, [0.0, 0.0, -1.0], &settings, &Sequential);
    assert_eq!(surface.records.len(), p0s.len() * deltas.len());
    for row in 2..p0s.len() {
        for col in 0..deltas.len() {
            let r = surface.get(row, col);
            assert_eq!((r.m_minus_1, r.outcome), (0, ExitOutcome::RightDetector), "p0 {} Δ {}", r.p0, r.delta);
        }
    }
    // At resonance u stays 0, so the atom flies freely.
    let mid = deltas.len() / 2;
    for (row, &p0) in p0s.iter().enumerate() {
        let r = surface.get(row, mid);
        let expected = TAU / (9.17e-5 * p0);
        assert!((r.exit_time - expected).abs() <= 1e-9 * expected);
        assert_eq!(r.m_minus_1, 0);
    }
}

/// Midpoints of the level-`levels` middle-thirds intervals, from the base-3
/// digits 0 and 2.
fn ternary_cantor(levels: u32) -> Vec<f64> {
    (0u32..1 << levels)
        .map(|bits| {
            let mut x = 0.5 * 3f64.powi(-(levels as i32));
            for i in 0..levels {
                if bits >> (levels - 1 - i) & 1 == 1 {
                    x += 2.0 * 3f64.powi(-(i as i32 + 1));
                }
            }
            x
        })
        .collect()
}

#[test]
fn box_counting_calibration() {
    let cantor = ternary_cantor(10);
    let d = box_counting_dimension(&cantor, 1.0 / 3.0, 3f64.powi(-8), 8).unwrap();
    assert!((d.dimension - 2f64.ln() / 3f64.ln()).abs() <= 0.02, "{d:?}");
    assert!(!d.degenerate);

    let mut rng = StdRng::seed_from_u64(5);
    let uniform: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
    let d = box_counting_dimension(&uniform, 0.25, 1.0 / 1024.0, 9).unwrap();
    assert!((d.dimension - 1.0).abs() <= 0.05, "{d:?}");

    let points: Vec<f64> = (0..500).map(|i| i as f64 * 1e-3).collect();
    let d = box_counting_dimension(&points[..1], 0.1, 1e-3, 5);
    assert!(d.is_err());
    let single = vec![0.25; 200];
    let d = box_counting_dimension(&single, 0.25, 1.0 / 1024.0, 9).unwrap();
    assert!(d.dimension.abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn records_respect_cutoff(delta in -0.3f64..0.3, p0 in -800.0f64..800.0, a in 0.0f64..1.0) {
        let z0 = -a;
        let s0 = AtomState::new(0.0, p0, (1.0 - a * a).sqrt(), 0.0, z0).unwrap();
        let params = SystemParams::new(OMEGA_R, delta).unwrap();
        let rec = exit_time(&s0, &params, &cavity(5e3), &IntegratorConfig::coarse());
        prop_assert!(rec.error.is_none());
        prop_assert!(rec.exit_time > 0.0 && rec.exit_time <= 5e3);
        prop_assert_eq!(rec.is_censored(), rec.outcome == ExitOutcome::TrappedAtCutoff);
    }

    #[test]
    fn mirror_symmetry_holds_off_resonance(delta in -0.3f64..0.3, p0 in 50.0f64..800.0) {
        let params = SystemParams::new(OMEGA_R, delta).unwrap();
        let a = exit_time(&cold(p0), &params, &cavity(5e3), &IntegratorConfig::coarse());
        let b = exit_time(&cold(-p0), &params, &cavity(5e3), &IntegratorConfig::coarse());
        prop_assert_eq!(b.outcome, mirrored(a.outcome));
        prop_assert_eq!(a.m_minus_1, b.m_minus_1);
        prop_assert!((a.exit_time - b.exit_time).abs() <= 1e-9 * a.exit_time);
    }
}
