//! `atom-lattice` command-line driver.
//!
//! Exit codes: 0 success, 2 bad config or arguments, 3 run or write failure,
//! 4 finished with some failed cells or trajectories.

mod compare;
mod config;
mod experiments;
mod output;
mod pool;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use atom_lattice::fractal::{box_counting_dimension, refinement_cascade, singular_set, ExitOutcome, ScanSettings};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{Config, Format, Plan};
use experiments::Outcome;
use output::{Envelope, Table};
use pool::Pool;

#[derive(Parser)]
#[command(name = "atom-lattice", version, about = "Two-level atom in a standing-wave lattice: experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Compare a trajectory with an analytic approximation
    /// (config kind `analytic-compare`).
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Zoom repeatedly into unresolved stretches of an exit-time scan
    /// (config kind `exit-scan`).
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Number of zoom levels.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Resolution gain per level.
        #[arg(long, default_value_t = 10)]
        zoom: usize,
        #[command(flatten)]
        io: IoArgs,
    },
    /// Box-counting dimension of an exit-scan singular set or of a point file.
    Dim {
        /// Exit-scan config whose singular set is measured.
        #[arg(long, conflicts_with = "points", required_unless_present = "points")]
        config: Option<PathBuf>,
        /// Text file with one coordinate per line.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Largest box size; a quarter of the point span by default.
        #[arg(long)]
        eps_max: Option<f64>,
        /// Smallest box size; `eps_max / 32` by default.
        #[arg(long)]
        eps_min: Option<f64>,
        #[arg(long, default_value_t = 6)]
        scales: usize,
        #[command(flatten)]
        io: IoArgs,
    },
}

#[derive(Args)]
struct IoArgs {
    /// Output file; overrides `[output].path`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; otherwise `[output].format`, then the file extension.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads; all available cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Recorded in the envelope. Every experiment is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

type Res<T> = Result<T, Failure>;

/// A config as read, parsed and validated.
struct Loaded {
    text: String,
    config: Config,
    plan: Plan,
}

fn load(path: &Path) -> Res<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = Config::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let plan = config.plan().map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(Loaded { text, config, plan })
}

fn require_kind(loaded: &Loaded, kind: &str, command: &str) -> Res<()> {
    let found = loaded.config.experiment.kind();
    if found == kind {
        Ok(())
    } else {
        Err(Failure::Config(format!("`{command}` needs an experiment of kind `{kind}`, the config has `{found}`")))
    }
}

fn destination(io: &IoArgs, config: Option<&Config>) -> Res<(PathBuf, Format)> {
    let section = config.map(|c| &c.output);
    let path = io
        .out
        .clone()
        .or_else(|| section.and_then(|s| s.path.clone()))
        .ok_or_else(|| Failure::Config("no output path: pass --out or set [output].path".into()))?;
    let format = io.format.or_else(|| section.and_then(|s| s.format)).unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    });
    Ok((path, format))
}

fn pool(io: &IoArgs) -> Res<Pool> {
    if io.threads == Some(0) {
        return Err(Failure::Config("invalid parameter `threads`: must be at least 1".into()));
    }
    Pool::new(io.threads).map_err(Failure::Runtime)
}

/// Everything `finish` needs besides the outcome.
struct Job<'a> {
    command: &'static str,
    kind: String,
    loaded: Option<&'a Loaded>,
    io: &'a IoArgs,
    threads: usize,
    started: Instant,
}

fn finish(job: Job, outcome: Outcome) -> Res<ExitCode> {
    let (path, format) = destination(job.io, job.loaded.map(|l| &l.config))?;
    let config = match job.loaded {
        Some(l) => serde_json::to_value(&l.config).map_err(|e| Failure::Runtime(e.to_string()))?,
        None => Value::Null,
    };
    let envelope = Envelope {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: job.command.into(),
        kind: job.kind,
        config,
        config_text: job.loaded.map(|l| l.text.clone()).unwrap_or_default(),
        threads: job.threads,
        seed: job.io.seed,
        wall_time_s: job.started.elapsed().as_secs_f64(),
        records: outcome.table.rows.len(),
        failed: outcome.failed,
        summary: outcome.summary,
    };
    let written = output::write_result(&path, format, &outcome.table, &envelope).map_err(Failure::Runtime)?;
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("{} records, {} failed, {:.2} s", envelope.records, envelope.failed, envelope.wall_time_s);
    Ok(if outcome.failed > 0 { ExitCode::from(4) } else { ExitCode::SUCCESS })
}

fn run_config(command: &'static str, config: &Path, io: &IoArgs, kind: Option<&str>) -> Res<ExitCode> {
    let started = Instant::now();
    let loaded = load(config)?;
    if let Some(kind) = kind {
        require_kind(&loaded, kind, command)?;
    }
    destination(io, Some(&loaded.config))?;
    let pool = pool(io)?;
    let outcome = experiments::execute(&loaded.plan, &pool).map_err(Failure::Runtime)?;
    let job = Job { command, kind: loaded.config.experiment.kind().into(), loaded: Some(&loaded), io, threads: pool.threads(), started };
    finish(job, outcome)
}

fn scan_parts(plan: &Plan) -> (Vec<f64>, atom_lattice::AtomState, ScanSettings) {
    match plan {
        Plan::ExitScan { omega_r, deltas, s0, cavity, cfg } => {
            (deltas.clone(), *s0, ScanSettings { omega_r: *omega_r, cavity: *cavity, integrator: *cfg })
        }
        _ => unreachable!("kind checked before"),
    }
}

fn probe(config: &Path, levels: usize, zoom: usize, io: &IoArgs) -> Res<ExitCode> {
    let started = Instant::now();
    let loaded = load(config)?;
    require_kind(&loaded, "exit-scan", "probe")?;
    if levels == 0 || zoom < 2 {
        return Err(Failure::Config(format!("need --levels ≥ 1 and --zoom ≥ 2, got {levels} and {zoom}")));
    }
    destination(io, Some(&loaded.config))?;
    let pool = pool(io)?;
    let (deltas, s0, settings) = scan_parts(&loaded.plan);
    let coarse = atom_lattice::fractal::exit_time_scan(&deltas, &s0, &settings, &pool);
    let reports =
        refinement_cascade(&coarse, levels, zoom, &s0, &settings, &pool).map_err(|e| Failure::Runtime(e.to_string()))?;

    let mut table = Table::new(&[
        "level",
        "lo",
        "hi",
        "zoom",
        "samples",
        "coarse_transitions",
        "fine_transitions",
        "new_transitions",
        "unresolved_intervals",
        "max_m_minus_1",
    ]);
    let invalid = |recs: &[atom_lattice::fractal::ExitRecord]| recs.iter().filter(|r| r.outcome == ExitOutcome::Invalid).count();
    let mut failed = invalid(&coarse);
    for (i, r) in reports.iter().enumerate() {
        failed += invalid(&r.records);
        table.push(vec![
            (i + 1).into(),
            r.interval.0.into(),
            r.interval.1.into(),
            r.zoom.into(),
            r.records.len().into(),
            r.coarse_transitions.into(),
            r.fine_transitions.into(),
            r.new_transitions.into(),
            r.unresolved.len().into(),
            r.max_m_minus_1.into(),
        ]);
    }
    let summary = json!({
        "coarse_samples": coarse.len(),
        "coarse_transitions": atom_lattice::fractal::count_transitions(&coarse),
        "levels_requested": levels,
        "levels_run": reports.len(),
    });
    let job = Job { command: "probe", kind: "exit-scan".into(), loaded: Some(&loaded), io, threads: pool.threads(), started };
    finish(job, Outcome { table, summary, failed })
}

fn read_points(path: &Path) -> Res<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Failure::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

struct DimArgs<'a> {
    config: Option<&'a Path>,
    points: Option<&'a Path>,
    eps_max: Option<f64>,
    eps_min: Option<f64>,
    scales: usize,
    io: &'a IoArgs,
}

fn dim(args: DimArgs) -> Res<ExitCode> {
    let started = Instant::now();
    let io = args.io;
    let (loaded, points, threads, failed) = match (args.config, args.points) {
        (Some(config), _) => {
            let loaded = load(config)?;
            require_kind(&loaded, "exit-scan", "dim")?;
            destination(io, Some(&loaded.config))?;
            let pool = pool(io)?;
            let (deltas, s0, settings) = scan_parts(&loaded.plan);
            let records = atom_lattice::fractal::exit_time_scan(&deltas, &s0, &settings, &pool);
            let failed = records.iter().filter(|r| r.outcome == ExitOutcome::Invalid).count();
            (Some(loaded), singular_set(&records), pool.threads(), failed)
        }
        (None, Some(path)) => {
            destination(io, None)?;
            (None, read_points(path)?, 1, 0)
        }
        (None, None) => return Err(Failure::Config("pass --config or --points".into())),
    };
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eps_max = args.eps_max.unwrap_or(0.25 * (hi - lo));
    let eps_min = args.eps_min.unwrap_or(eps_max / 32.0);
    let fit = box_counting_dimension(&points, eps_max, eps_min, args.scales).map_err(|e| Failure::Runtime(e.to_string()))?;

    let mut table = Table::new(&["eps", "count"]);
    for (eps, n) in &fit.counts {
        table.push(vec![(*eps).into(), (*n).into()]);
    }
    let summary = json!({
        "points": points.len(),
        "dimension": fit.dimension,
        "stderr": fit.stderr,
        "ci95": [fit.ci.0, fit.ci.1],
        "r_squared": fit.r_squared,
        "degenerate": fit.degenerate,
        "eps_max": eps_max,
        "eps_min": eps_min,
    });
    eprintln!("dimension {:.4} ± {:.4} (R² {:.4})", fit.dimension, fit.stderr, fit.r_squared);
    let kind = if loaded.is_some() { "exit-scan" } else { "points" };
    let job = Job { command: "dim", kind: kind.into(), loaded: loaded.as_ref(), io, threads, started };
    finish(job, Outcome { table, summary, failed })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, io } => run_config("run", config, io, None),
        Command::Compare { config, io } => run_config("compare", config, io, Some("analytic-compare")),
        Command::Probe { config, levels, zoom, io } => probe(config, *levels, *zoom, io),
        Command::Dim { config, points, eps_max, eps_min, scales, io } => dim(DimArgs {
            config: config.as_deref(),
            points: points.as_deref(),
            eps_max: *eps_max,
            eps_min: *eps_min,
            scales: *scales,
            io,
        }),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
