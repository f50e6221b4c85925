//! Runs validated plans and turns their results into tables.

use atom_lattice::chaos::{lyapunov_bloch_map, lyapunov_parameter_map, LyapunovMap, MapCell};
use atom_lattice::fractal::{
    count_transitions, exit_time_scan, exit_time_surface, unresolved_intervals, ExitOutcome, ExitRecord, ScanSettings,
};
use atom_lattice::integrator::integrate;
use atom_lattice::poincare::{fibonacci_bloch_family, poincare_map, shell_initial_conditions, SectionSettings};
use atom_lattice::Sampling;
use serde_json::{json, Value};

use crate::compare;
use crate::config::Plan;
use crate::output::{tag, Cell, Table};
use crate::pool::Pool;

/// Output of one experiment.
pub struct Outcome {
    pub table: Table,
    pub summary: Value,
    /// Cells, trajectories or points that failed while others succeeded.
    pub failed: usize,
}

pub fn execute(plan: &Plan, pool: &Pool) -> Result<Outcome, String> {
    match plan {
        Plan::Trajectory { params, s0, tau_end, sample_every, cfg } => {
            let sampling = sample_every.map_or(Sampling::Stride(1), Sampling::Dense);
            let tr = integrate(s0, params, *tau_end, cfg, sampling).map_err(|e| e.to_string())?;
            let mut table = Table::new(&["tau", "x", "p", "u", "v", "z"]);
            for (t, s) in &tr.samples {
                table.push(vec![(*t).into(), s.x.into(), s.p.into(), s.u.into(), s.v.into(), s.z.into()]);
            }
            let summary = json!({
                "energy_drift": tr.energy_drift,
                "bloch_drift": tr.bloch_drift,
                "steps": tr.step_count,
                "final_tau": tr.final_tau(),
            });
            Ok(Outcome { table, summary, failed: 0 })
        }
        Plan::LyapunovMap { omega_r, delta, s0, settings } => {
            let map = lyapunov_parameter_map(omega_r, delta, s0, settings, pool).map_err(|e| e.to_string())?;
            Ok(map_outcome(&map))
        }
        Plan::BlochMap { shell, v0, z0, x0, settings } => {
            let map = lyapunov_bloch_map(v0, z0, shell, *x0, settings, pool).map_err(|e| e.to_string())?;
            Ok(map_outcome(&map))
        }
        Plan::Poincare { shell, family_size, x0, tau_max, max_crossings, cfg } => {
            let family = shell_initial_conditions(shell, &fibonacci_bloch_family(*family_size), *x0);
            if family.accepted.is_empty() {
                return Err(format!("no seed of the family lies on the shell W = {}", shell.energy));
            }
            let settings = SectionSettings { tau_max: *tau_max, max_crossings: *max_crossings, integrator: *cfg };
            let map = poincare_map(&family.accepted, shell, &settings, pool).map_err(|e| e.to_string())?;
            let mut table = Table::new(&["trajectory_id", "tau", "x", "p", "u", "v", "z", "hemisphere"]);
            for pt in &map.points {
                table.push(vec![
                    pt.trajectory_id.into(),
                    pt.tau.into(),
                    pt.x.into(),
                    pt.p.into(),
                    pt.u.into(),
                    pt.v.into(),
                    pt.z.into(),
                    tag(&pt.hemisphere),
                ]);
            }
            let summary = json!({
                "energy": shell.energy,
                "p_eff": shell.p_eff,
                "accepted": family.accepted.len(),
                "rejected": family.rejected,
                "truncated": map.truncated,
            });
            Ok(Outcome { table, summary, failed: map.truncated.len() })
        }
        Plan::ExitScan { omega_r, deltas, s0, cavity, cfg } => {
            let settings = ScanSettings { omega_r: *omega_r, cavity: *cavity, integrator: *cfg };
            let records = exit_time_scan(deltas, s0, &settings, pool);
            Ok(exit_outcome(&records, Some(&records)))
        }
        Plan::ExitSurface { omega_r, deltas, p0s, bloch, cavity, cfg } => {
            let settings = ScanSettings { omega_r: *omega_r, cavity: *cavity, integrator: *cfg };
            let surface = exit_time_surface(deltas, p0s, *bloch, &settings, pool);
            Ok(exit_outcome(&surface.records, None))
        }
        Plan::AnalyticCompare { params, s0, branch, tau_end, sample_every, cfg } => {
            compare::run(params, s0, *branch, *tau_end, *sample_every, cfg)
        }
    }
}

fn map_outcome(map: &LyapunovMap) -> Outcome {
    let mut table = Table::new(&[
        leak(&map.rows.name),
        leak(&map.cols.name),
        "status",
        "lambda",
        "stderr",
        "converged",
        "chaotic",
        "note",
    ]);
    let ncols = map.cols.len();
    for (i, cell) in map.cells.iter().enumerate() {
        let (r, c) = (map.rows.values[i / ncols], map.cols.values[i % ncols]);
        let row = match cell {
            MapCell::Value { lambda, stderr, converged, chaotic } => {
                vec!["value".into(), (*lambda).into(), (*stderr).into(), (*converged).into(), (*chaotic).into(), Cell::Empty]
            }
            MapCell::Void { reason } => vec!["void".into(), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, reason.clone().into()],
            MapCell::Failed { error } => vec!["failed".into(), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, error.clone().into()],
        };
        let mut full = vec![r.into(), c.into()];
        full.extend(row);
        table.push(full);
    }
    let chaotic = map.cells.iter().filter(|c| matches!(c, MapCell::Value { chaotic: true, .. })).count();
    let void = map.cells.iter().filter(|c| matches!(c, MapCell::Void { .. })).count();
    let summary = json!({
        "rows": map.rows.len(),
        "cols": map.cols.len(),
        "chaotic_cells": chaotic,
        "void_cells": void,
        "failed_cells": map.failed_count(),
    });
    Outcome { table, summary, failed: map.failed_count() }
}

/// Axis names come from config-defined constants, so the set is tiny.
fn leak(name: &str) -> &'static str {
    match name {
        "omega_r" => "omega_r",
        "delta" => "delta",
        "v0" => "v0",
        "z0" => "z0",
        "p0" => "p0",
        _ => "axis",
    }
}

pub fn exit_table(records: &[ExitRecord]) -> Table {
    let mut table = Table::new(&["delta", "p0", "exit_time", "m_minus_1", "outcome", "classification", "error"]);
    for r in records {
        table.push(vec![
            r.delta.into(),
            r.p0.into(),
            r.exit_time.into(),
            r.m_minus_1.into(),
            tag(&r.outcome),
            tag(&r.classification),
            r.error.clone().into(),
        ]);
    }
    table
}

/// `scan` is set for one-dimensional scans, whose band structure is
/// summarized too.
fn exit_outcome(records: &[ExitRecord], scan: Option<&[ExitRecord]>) -> Outcome {
    let failed = records.iter().filter(|r| r.outcome == ExitOutcome::Invalid).count();
    let censored = records.iter().filter(|r| r.is_censored()).count();
    let mut summary = json!({ "records": records.len(), "censored": censored, "invalid": failed });
    if let Some(scan) = scan {
        summary["transitions"] = json!(count_transitions(scan));
        summary["unresolved_intervals"] = json!(unresolved_intervals(scan));
    }
    Outcome { table: exit_table(records), summary, failed }
}
