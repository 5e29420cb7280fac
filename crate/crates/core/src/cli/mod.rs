//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure (including usage errors and
//! a failed `check`), 2 integration abort, 3 I/O error.

pub mod boundary;
pub mod check;
pub mod scenario;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::alpha::checks::Verdict;
use crate::alpha::{time_grid, OptProfile};
use crate::funnel::FunnelSpec;
use crate::sim::{integrate, Events, RunSummary};
use boundary::{default_window, extract, BoundaryPolyline, Grid, Level};
use scenario::{LoadError, Overrides, Scenario};

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "ALPHAFUNNEL_LOG";

#[derive(Debug, Parser)]
#[command(name = "alphafunnel", version, about = "Funnel control of a smooth constraint metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write trajectory.csv, events.json and summary.json.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Run the structural checks and the feasibility sweep.
    Check {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Zero level set of the metric at the given times (planar states only).
    Boundary {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 400)]
        grid: usize,
        /// xmin,xmax,ymin,ymax
        #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
        window: Option<Vec<f64>>,
        /// Also trace the zero set of the exact minimum.
        #[arg(long)]
        alpha_bar: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Maximum of the metric over the state on a time grid.
    Alphaopt {
        file: PathBuf,
        /// t0:t1:dt
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        /// Write CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run every time from scratch instead of warm-starting.
        #[arg(long)]
        cold: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Abort(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Abort(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Abort(m) | Failure::Io(m) => m,
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Simulate { file, out, dt, t_end } => simulate(&file, &out, Overrides { dt, t_end }),
        Command::Check { file, json } => check(&file, json),
        Command::Boundary {
            file,
            times,
            grid,
            window,
            alpha_bar,
            out,
        } => boundary_cmd(&file, &times, grid, window.as_deref(), alpha_bar, &out),
        Command::Alphaopt { file, range, out, cold } => alphaopt(&file, &range, out.as_deref(), cold),
    }
}

fn load(path: &Path, overrides: Overrides) -> Result<Scenario, Failure> {
    let scenario = Scenario::load_with(path, overrides)?;
    for w in &scenario.warnings {
        eprintln!("warning: {w}");
    }
    Ok(scenario)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_failure(path))
}

#[derive(Serialize)]
struct EventsFile<'a> {
    completed: bool,
    alpha0: f64,
    runtime_seconds: f64,
    #[serde(flatten)]
    events: &'a Events,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    funnel: &'a FunnelSpec,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

fn simulate(file: &Path, out: &Path, overrides: Overrides) -> Result<u8, Failure> {
    let scenario = load(file, overrides)?;
    println!("alpha(0, x0) = {:.6}", scenario.alpha0);
    fs::create_dir_all(out).map_err(io_failure(out))?;
    let started = Instant::now();
    let trajectory = integrate(&scenario.plant, &scenario.controller, &scenario.sim)
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let runtime = started.elapsed().as_secs_f64();
    info!("integrated {} steps in {runtime:.3} s", trajectory.events.steps);

    let csv = out.join("trajectory.csv");
    let f = File::create(&csv).map_err(io_failure(&csv))?;
    let mut w = BufWriter::new(f);
    trajectory.write_csv(&mut w).map_err(io_failure(&csv))?;
    w.flush().map_err(io_failure(&csv))?;
    write_json(
        &out.join("events.json"),
        &EventsFile {
            completed: trajectory.completed(),
            alpha0: scenario.alpha0,
            runtime_seconds: runtime,
            events: &trajectory.events,
        },
    )?;
    write_json(
        &out.join("summary.json"),
        &SummaryFile {
            funnel: scenario.funnel(),
            summary: &trajectory.summary,
        },
    )?;
    let ev = &trajectory.events;
    match ev.first_positive_alpha_bar {
        Some(t) => println!("alpha_bar first positive at t = {t}"),
        None => println!("alpha_bar never positive"),
    }
    println!("breaches: {}, clamps: {}, runtime: {runtime:.3} s", ev.breaches, ev.clamps);
    match &ev.abort {
        Some(a) => Err(Failure::Abort(format!("integration aborted: {a}"))),
        None => Ok(0),
    }
}

fn check(file: &Path, json: bool) -> Result<u8, Failure> {
    let scenario = load(file, Overrides::default())?;
    let report = check::run_checks(&scenario);
    if json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{report}");
    }
    Ok(if report.verdict == Verdict::Fail { 1 } else { 0 })
}

fn boundary_cmd(
    file: &Path,
    times: &[f64],
    cells: usize,
    window: Option<&[f64]>,
    alpha_bar: bool,
    out: &Path,
) -> Result<u8, Failure> {
    let scenario = load(file, Overrides::default())?;
    let metric = scenario.metric();
    if let Some(w) = window {
        if w.len() != 4 {
            return Err(Failure::Validation(format!("--box expects 4 numbers, got {}", w.len())));
        }
    }
    fs::create_dir_all(out).map_err(io_failure(out))?;
    for &t in times {
        let grid = match window {
            Some(w) => Grid {
                x: (w[0], w[1]),
                y: (w[2], w[3]),
                cells,
            },
            None => default_window(metric, t, cells),
        };
        let mut levels = vec![Level::Alpha];
        if alpha_bar {
            levels.push(Level::AlphaBar);
        }
        let polylines: Vec<BoundaryPolyline> = levels
            .into_iter()
            .map(|level| extract(metric, t, &grid, level))
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::Validation(e.to_string()))?;
        for p in &polylines {
            if p.chains.is_empty() {
                let msg = format!("{} = 0 has no crossing in the window at t = {t}; the set may be empty", p.level.name());
                warn!("{msg}");
                eprintln!("warning: {msg}");
            }
        }
        let path = out.join(format!("boundary_t{t}.csv"));
        let f = File::create(&path).map_err(io_failure(&path))?;
        let mut w = BufWriter::new(f);
        boundary::write_csv(&polylines, &mut w).map_err(io_failure(&path))?;
        w.flush().map_err(io_failure(&path))?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn parse_range(range: &str) -> Result<(f64, f64, f64), Failure> {
    let bad = || Failure::Validation(format!("--range expects t0:t1:dt, got {range:?}"));
    let parts: Vec<f64> = range
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match parts[..] {
        [t0, t1, dt] if t0.is_finite() && t1.is_finite() && t1 >= t0 && dt > 0.0 && dt.is_finite() => Ok((t0, t1, dt)),
        _ => Err(bad()),
    }
}

fn alphaopt(file: &Path, range: &str, out: Option<&Path>, cold: bool) -> Result<u8, Failure> {
    let (t0, t1, dt) = parse_range(range)?;
    let scenario = load(file, Overrides::default())?;
    let times = time_grid(t0, t1, dt);
    let cfg = scenario.optimizer();
    let profile = if cold {
        OptProfile::cold(scenario.metric(), &times, &cfg)
    } else {
        OptProfile::warm(scenario.metric(), &times, &cfg)
    };
    if profile.warnings() > 0 {
        warn!("optimizer did not converge at {} of {} times", profile.warnings(), times.len());
    }
    match out {
        Some(path) => {
            let f = File::create(path).map_err(io_failure(path))?;
            let mut w = BufWriter::new(f);
            profile.write_csv(&mut w).map_err(io_failure(path))?;
            w.flush().map_err(io_failure(path))?;
            println!("alpha_opt in [{:.6}, {:.6}] over {} times", profile.infimum(), profile.supremum(), times.len());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            profile.write_csv(&mut lock).map_err(|e| Failure::Io(e.to_string()))?;
        }
    }
    Ok(0)
}
