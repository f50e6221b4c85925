//! Numerical trajectory against an analytic approximation.

use atom_lattice::analytic::{
    doppler_rabi_inversion, doppler_rabi_validity, limit_inversion, limit_validity, raman_nath_inversion,
    raman_nath_validity, DopplerFrame, ResonantInversion, ResonantOrbit, Validity,
};
use atom_lattice::integrator::integrate;
use atom_lattice::{AtomState, IntegratorConfig, Sampling, SystemParams};
use serde_json::json;

use crate::config::CompareBranch;
use crate::experiments::Outcome;
use crate::output::{Cell, Table};

/// Predicted `(x, p)` when the branch has them, and `z`.
type Prediction = (Option<(f64, f64)>, f64);

fn validity(branch: CompareBranch, s0: &AtomState, params: &SystemParams) -> Validity {
    match branch {
        CompareBranch::Resonant => {
            let mut v = Validity::default();
            if params.delta != 0.0 {
                v.violations.push(format!("Δ = {} is not 0", params.delta));
            }
            if s0.x != 0.0 {
                v.violations.push(format!("x0 = {} is not 0", s0.x));
            }
            v
        }
        CompareBranch::RamanNath => {
            let mut v = raman_nath_validity(s0.p, s0.u, params.omega_r);
            if params.delta != 0.0 {
                v.violations.push(format!("Δ = {} is not 0", params.delta));
            }
            v
        }
        CompareBranch::FarDetuned | CompareBranch::FastAtom => {
            limit_validity(s0, params, branch.limit().expect("limit branch"))
        }
        CompareBranch::DopplerRabi => doppler_rabi_validity(s0, params),
    }
}

pub fn run(
    params: &SystemParams,
    s0: &AtomState,
    branch: CompareBranch,
    tau_end: f64,
    sample_every: f64,
    cfg: &IntegratorConfig,
) -> Result<Outcome, String> {
    let valid = validity(branch, s0, params);
    let tr = integrate(s0, params, tau_end, cfg, Sampling::Dense(sample_every)).map_err(|e| e.to_string())?;

    let resonant = match branch {
        CompareBranch::Resonant => {
            let orbit = ResonantOrbit::new(s0.p, s0.u, params.omega_r).map_err(|e| e.to_string())?;
            Some(ResonantInversion::new(orbit, s0.v, s0.z).map_err(|e| e.to_string())?)
        }
        _ => None,
    };
    let frame = DopplerFrame::new(params, s0.p);
    let predict = |t: f64, s: &AtomState| -> Result<Prediction, String> {
        Ok(match branch {
            CompareBranch::Resonant => {
                let inv = resonant.as_ref().expect("resonant solution");
                let xp = inv.orbit.position_momentum(t).map_err(|e| e.to_string())?;
                (Some(xp), inv.at(t).map_err(|e| e.to_string())?)
            }
            CompareBranch::RamanNath => (None, raman_nath_inversion(t, s0.z, s0.v, s0.p, params.omega_r)),
            CompareBranch::FarDetuned | CompareBranch::FastAtom => {
                let z = limit_inversion(t, s.x, s0, params, branch.limit().expect("limit branch"))
                    .map_err(|e| e.to_string())?;
                (None, z)
            }
            CompareBranch::DopplerRabi => (None, doppler_rabi_inversion(t, s0, &frame)),
        })
    };

    let mut table = Table::new(&["tau", "x", "p", "z", "x_pred", "p_pred", "z_pred"]);
    let x_scale = tr.samples.iter().map(|(_, s)| s.x.abs()).fold(1.0, f64::max);
    let p_scale = tr.samples.iter().map(|(_, s)| s.p.abs()).fold(f64::MIN_POSITIVE, f64::max);
    let (mut max_z, mut sum_z2, mut max_x, mut max_p) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (t, s) in &tr.samples {
        let (xp, z) = predict(*t, s)?;
        let dz = s.z - z;
        max_z = max_z.max(dz.abs());
        sum_z2 += dz * dz;
        if let Some((x, p)) = xp {
            max_x = max_x.max((s.x - x).abs() / x_scale);
            max_p = max_p.max((s.p - p).abs() / p_scale);
        }
        table.push(vec![
            (*t).into(),
            s.x.into(),
            s.p.into(),
            s.z.into(),
            xp.map(|v| v.0).into(),
            xp.map(|v| v.1).into(),
            Cell::Num(z),
        ]);
    }
    let n = tr.samples.len().max(1) as f64;
    let mut summary = json!({
        "branch": branch,
        "valid": valid.is_valid(),
        "violations": valid.violations,
        "samples": tr.samples.len(),
        "max_abs_z_residual": max_z,
        "rms_z_residual": (sum_z2 / n).sqrt(),
    });
    if branch == CompareBranch::Resonant {
        summary["max_rel_x_error"] = json!(max_x);
        summary["max_rel_p_error"] = json!(max_p);
    }
    if branch == CompareBranch::DopplerRabi {
        summary["doppler_frame"] = json!(frame);
    }
    Ok(Outcome { table, summary, failed: 0 })
}
