//! Experiment configuration files.
//!
//! A config is a TOML document with an `[experiment]` table tagged by
//! `kind`, plus optional `[integrator]` and `[output]` tables. Unknown keys
//! anywhere are errors. All quantities are dimensionless.

use std::path::PathBuf;

use atom_lattice::analytic::LimitBranch;
use atom_lattice::chaos::{Axis, LyapunovSettings, DEFAULT_RENORM_INTERVAL, DEFAULT_TOTAL_TAU};
use atom_lattice::fractal::{CavitySpec, DEFAULT_HALF_WIDTH, DEFAULT_TAU_CUTOFF};
use atom_lattice::poincare::{EnergyShell, DEFAULT_FAMILY_SIZE, DEFAULT_MAX_CROSSINGS};
use atom_lattice::{AtomState, IntegratorConfig, SystemParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Precise,
    Coarse,
}

/// Preset plus optional per-field overrides. Without a preset the
/// experiment's own default applies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub preset: Option<Preset>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub initial_step: Option<f64>,
}

impl IntegratorSection {
    pub fn resolve(&self, default: Preset) -> Result<IntegratorConfig, String> {
        let mut cfg = match self.preset.unwrap_or(default) {
            Preset::Precise => IntegratorConfig::precise(),
            Preset::Coarse => IntegratorConfig::coarse(),
        };
        cfg.rel_tol = self.rel_tol.unwrap_or(cfg.rel_tol);
        cfg.abs_tol = self.abs_tol.unwrap_or(cfg.abs_tol);
        cfg.max_step = self.max_step.unwrap_or(cfg.max_step);
        cfg.initial_step = self.initial_step.unwrap_or(cfg.initial_step);
        cfg.validate().map_err(|e| format!("integrator: {e}"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    #[serde(default)]
    pub x: f64,
    pub p: f64,
    #[serde(default)]
    pub u: f64,
    #[serde(default)]
    pub v: f64,
    pub z: f64,
}

impl State {
    fn build(&self, field: &str) -> Result<AtomState, String> {
        AtomState::new(self.x, self.p, self.u, self.v, self.z).map_err(|e| format!("{field}: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// `n` points from `lo` to `hi`, both included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Grid {
    fn axis(&self, name: &str) -> Result<Axis, String> {
        let axis = match self.spacing {
            Spacing::Linear => Axis::linspace(name, self.lo, self.hi, self.n),
            Spacing::Log => Axis::logspace(name, self.lo, self.hi, self.n),
        };
        axis.map_err(|e| format!("{name}: {e}"))
    }
}

/// Energy shell given either by `energy` or by `p_eff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSpec {
    pub energy: Option<f64>,
    pub p_eff: Option<f64>,
}

impl ShellSpec {
    fn build(&self, params: SystemParams) -> Result<EnergyShell, String> {
        match (self.energy, self.p_eff) {
            (Some(w), None) => EnergyShell::from_energy(w, params).map_err(|e| format!("shell.energy: {e}")),
            (None, Some(p)) if p.is_finite() => Ok(EnergyShell::from_momentum(p, params)),
            (None, Some(p)) => Err(format!("shell.p_eff: must be finite, got {p}")),
            _ => Err("shell: give exactly one of `energy` and `p_eff`".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareBranch {
    /// Elliptic solution at Δ = 0.
    Resonant,
    RamanNath,
    FarDetuned,
    FastAtom,
    DopplerRabi,
}

impl CompareBranch {
    pub fn limit(self) -> Option<LimitBranch> {
        match self {
            CompareBranch::FarDetuned => Some(LimitBranch::FarDetuned),
            CompareBranch::FastAtom => Some(LimitBranch::FastAtom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Trajectory {
        omega_r: f64,
        delta: f64,
        initial: State,
        tau_end: f64,
        /// Spacing of interpolated output; every accepted step when absent.
        sample_every: Option<f64>,
    },
    LyapunovMap {
        omega_r: Grid,
        delta: Grid,
        initial: Option<State>,
        total_tau: Option<f64>,
        renorm_interval: Option<f64>,
    },
    BlochMap {
        omega_r: f64,
        delta: f64,
        shell: ShellSpec,
        v0: Grid,
        z0: Grid,
        #[serde(default)]
        x0: f64,
        total_tau: Option<f64>,
        renorm_interval: Option<f64>,
    },
    Poincare {
        omega_r: f64,
        delta: f64,
        shell: ShellSpec,
        family_size: Option<usize>,
        #[serde(default)]
        x0: f64,
        tau_max: f64,
        max_crossings: Option<usize>,
    },
    ExitScan {
        omega_r: f64,
        delta: Grid,
        initial: State,
        half_width: Option<f64>,
        tau_cutoff: Option<f64>,
    },
    ExitSurface {
        omega_r: f64,
        delta: Grid,
        p0: Grid,
        /// `(u0, v0, z0)`; defaults to the ground state `(0, 0, −1)`.
        bloch: Option<[f64; 3]>,
        half_width: Option<f64>,
        tau_cutoff: Option<f64>,
    },
    AnalyticCompare {
        omega_r: f64,
        delta: f64,
        initial: State,
        branch: CompareBranch,
        tau_end: f64,
        sample_every: f64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Trajectory { .. } => "trajectory",
            Experiment::LyapunovMap { .. } => "lyapunov-map",
            Experiment::BlochMap { .. } => "bloch-map",
            Experiment::Poincare { .. } => "poincare",
            Experiment::ExitScan { .. } => "exit-scan",
            Experiment::ExitSurface { .. } => "exit-surface",
            Experiment::AnalyticCompare { .. } => "analytic-compare",
        }
    }

    fn default_preset(&self) -> Preset {
        match self {
            Experiment::LyapunovMap { .. } | Experiment::BlochMap { .. } => Preset::Coarse,
            _ => Preset::Precise,
        }
    }
}

/// Validated, ready-to-run form of a config.
#[derive(Debug, Clone)]
pub enum Plan {
    Trajectory { params: SystemParams, s0: AtomState, tau_end: f64, sample_every: Option<f64>, cfg: IntegratorConfig },
    LyapunovMap { omega_r: Axis, delta: Axis, s0: AtomState, settings: LyapunovSettings },
    BlochMap { shell: EnergyShell, v0: Axis, z0: Axis, x0: f64, settings: LyapunovSettings },
    Poincare { shell: EnergyShell, family_size: usize, x0: f64, tau_max: f64, max_crossings: usize, cfg: IntegratorConfig },
    ExitScan { omega_r: f64, deltas: Vec<f64>, s0: AtomState, cavity: CavitySpec, cfg: IntegratorConfig },
    ExitSurface { omega_r: f64, deltas: Vec<f64>, p0s: Vec<f64>, bloch: [f64; 3], cavity: CavitySpec, cfg: IntegratorConfig },
    AnalyticCompare { params: SystemParams, s0: AtomState, branch: CompareBranch, tau_end: f64, sample_every: f64, cfg: IntegratorConfig },
}

fn params(omega_r: f64, delta: f64) -> Result<SystemParams, String> {
    SystemParams::new(omega_r, delta).map_err(|e| e.to_string())
}

fn positive(field: &str, value: f64) -> Result<f64, String> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(format!("invalid parameter `{field}`: must be positive and finite, got {value}"))
    }
}

fn lyapunov_settings(total_tau: Option<f64>, renorm: Option<f64>, cfg: IntegratorConfig) -> Result<LyapunovSettings, String> {
    let total_tau = positive("total_tau", total_tau.unwrap_or(DEFAULT_TOTAL_TAU))?;
    let renorm_interval = positive("renorm_interval", renorm.unwrap_or(DEFAULT_RENORM_INTERVAL))?;
    if renorm_interval > total_tau {
        return Err(format!("invalid parameter `renorm_interval`: {renorm_interval} exceeds total_tau {total_tau}"));
    }
    Ok(LyapunovSettings { total_tau, renorm_interval, integrator: cfg, ..Default::default() })
}

fn cavity(half_width: Option<f64>, tau_cutoff: Option<f64>) -> Result<CavitySpec, String> {
    let spec = CavitySpec {
        half_width: half_width.unwrap_or(DEFAULT_HALF_WIDTH),
        tau_cutoff: tau_cutoff.unwrap_or(DEFAULT_TAU_CUTOFF),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Checks every field and builds the run plan. Messages name the field.
    pub fn plan(&self) -> Result<Plan, String> {
        let cfg = self.integrator.resolve(self.experiment.default_preset())?;
        Ok(match &self.experiment {
            Experiment::Trajectory { omega_r, delta, initial, tau_end, sample_every } => {
                if let Some(h) = sample_every {
                    positive("sample_every", *h)?;
                }
                Plan::Trajectory {
                    params: params(*omega_r, *delta)?,
                    s0: initial.build("initial")?,
                    tau_end: positive("tau_end", *tau_end)?,
                    sample_every: *sample_every,
                    cfg,
                }
            }
            Experiment::LyapunovMap { omega_r, delta, initial, total_tau, renorm_interval } => {
                let omega_r = omega_r.axis("omega_r")?;
                if omega_r.values.iter().any(|w| !(*w > 0.0)) {
                    return Err("invalid parameter `omega_r`: grid values must be positive".into());
                }
                Plan::LyapunovMap {
                    omega_r,
                    delta: delta.axis("delta")?,
                    s0: match initial {
                        Some(s) => s.build("initial")?,
                        None => atom_lattice::chaos::default_map_state(),
                    },
                    settings: lyapunov_settings(*total_tau, *renorm_interval, cfg)?,
                }
            }
            Experiment::BlochMap { omega_r, delta, shell, v0, z0, x0, total_tau, renorm_interval } => Plan::BlochMap {
                shell: shell.build(params(*omega_r, *delta)?)?,
                v0: v0.axis("v0")?,
                z0: z0.axis("z0")?,
                x0: *x0,
                settings: lyapunov_settings(*total_tau, *renorm_interval, cfg)?,
            },
            Experiment::Poincare { omega_r, delta, shell, family_size, x0, tau_max, max_crossings } => {
                let family_size = family_size.unwrap_or(DEFAULT_FAMILY_SIZE);
                if family_size == 0 {
                    return Err("invalid parameter `family_size`: must be at least 1".into());
                }
                Plan::Poincare {
                    shell: shell.build(params(*omega_r, *delta)?)?,
                    family_size,
                    x0: *x0,
                    tau_max: positive("tau_max", *tau_max)?,
                    max_crossings: max_crossings.unwrap_or(DEFAULT_MAX_CROSSINGS),
                    cfg,
                }
            }
            Experiment::ExitScan { omega_r, delta, initial, half_width, tau_cutoff } => {
                let cavity = cavity(*half_width, *tau_cutoff)?;
                let s0 = initial.build("initial")?;
                if s0.x.abs() >= cavity.half_width {
                    return Err(format!("invalid parameter `initial.x`: |x| must be below half_width {}", cavity.half_width));
                }
                Plan::ExitScan {
                    omega_r: positive("omega_r", *omega_r)?,
                    deltas: delta.axis("delta")?.values,
                    s0,
                    cavity,
                    cfg,
                }
            }
            Experiment::ExitSurface { omega_r, delta, p0, bloch, half_width, tau_cutoff } => {
                let bloch = bloch.unwrap_or([0.0, 0.0, -1.0]);
                AtomState::new(0.0, 0.0, bloch[0], bloch[1], bloch[2]).map_err(|e| format!("bloch: {e}"))?;
                Plan::ExitSurface {
                    omega_r: positive("omega_r", *omega_r)?,
                    deltas: delta.axis("delta")?.values,
                    p0s: p0.axis("p0")?.values,
                    bloch,
                    cavity: cavity(*half_width, *tau_cutoff)?,
                    cfg,
                }
            }
            Experiment::AnalyticCompare { omega_r, delta, initial, branch, tau_end, sample_every } => Plan::AnalyticCompare {
                params: params(*omega_r, *delta)?,
                s0: initial.build("initial")?,
                branch: *branch,
                tau_end: positive("tau_end", *tau_end)?,
                sample_every: positive("sample_every", *sample_every)?,
                cfg,
            },
        })
    }
}
