//! Command-line front end of the `flatdrive` harness. The CLI reads a
//! scenario file, calls the harness and writes what it returns; it does no
//! simulation of its own.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use flatdrive::estimation::{
    denoise, differentiate, estimate_f_order1, estimate_f_order2, Order, SlidingWindow,
};
use flatdrive::harness::compare::compare_controllers;
use flatdrive::harness::config::ScenarioConfig;
use flatdrive::harness::scenario::{run_scenario, PreparedScenario, Telemetry};
use flatdrive::harness::HarnessError;

/// Environment variable holding the default output root.
pub const OUT_ENV: &str = "FLATDRIVE_OUT";

#[derive(Debug, Parser)]
#[command(name = "flatdrive", version, about = "Vehicle tracking scenarios: simulate, compare, estimate, generate tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one controller on one plant and write telemetry, metrics and plot data.
    Simulate(Common),
    /// Run every controller on the nominal plant and each perturbation.
    Compare(Common),
    /// Run the sliding-window estimators over a CSV of `t,y[,u]`.
    EstimateTest {
        #[command(flatten)]
        common: Common,
        /// Input CSV with a header naming `t`, `y` and optionally `u`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Write the track geometry and the time reference.
    GenTrack(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: `$FLATDRIVE_OUT/<subcommand>`, else `runs/<subcommand>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// More progress output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// No progress output.
    #[arg(short, long, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

/// Failure classes, each with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, arguments or input files: exit 1.
    Config(String),
    /// The run ended on a fault such as divergence or leaving the track: exit 2.
    Fault(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Fault(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Fault(m) => f.write_str(m),
        }
    }
}

fn config_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn io_failure(e: anyhow::Error) -> Failure {
    Failure::Config(format!("{e:#}"))
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status. `out_root` replaces the `FLATDRIVE_OUT` lookup.
pub fn parse_and_dispatch<I, T>(argv: I, out_root: Option<PathBuf>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command, out_root) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

struct Reporter {
    level: i8,
}

impl Reporter {
    fn new(c: &Common) -> Self {
        Self { level: if c.quiet { -1 } else { c.verbose as i8 } }
    }

    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn dispatch(command: &Command, out_root: Option<PathBuf>) -> Result<(), Failure> {
    let (name, common) = match command {
        Command::Simulate(c) => ("simulate", c),
        Command::Compare(c) => ("compare", c),
        Command::EstimateTest { common, .. } => ("estimate-test", common),
        Command::GenTrack(c) => ("gen-track", c),
    };
    let cfg = load_config(common)?;
    if common.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let out = output_dir(common, name, out_root);
    fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .map_err(io_failure)?;
    let log = Reporter::new(common);
    log.debug(format!("{name}: writing to {}", out.display()));
    match command {
        Command::Simulate(_) => simulate(&cfg, &out, &log),
        Command::Compare(_) => compare(&cfg, &out, &log),
        Command::EstimateTest { input, .. } => {
            let input = input
                .as_deref()
                .ok_or_else(|| Failure::Config("estimate-test needs --input <CSV>".into()))?;
            estimate_test(&cfg, input, &out, &log)
        }
        Command::GenTrack(_) => gen_track(&cfg, &out, &log),
    }
}

/// Reads the scenario file (or the defaults) and applies `--seed`.
pub fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        None => ScenarioConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            ScenarioConfig::from_text(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output_dir(common: &Common, name: &str, out_root: Option<PathBuf>) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let root = out_root
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(name)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(io_failure)
}

/// A two-column plot panel taken from telemetry columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Panel {
    pub name: &'static str,
    pub x: &'static str,
    pub y: &'static str,
}

/// Path overlay, tracking errors and control signals.
pub const PLOT_PANELS: [Panel; 5] = [
    Panel { name: "path", x: "X", y: "Y" },
    Panel { name: "lateral_error", x: "t", y: "e_lat" },
    Panel { name: "yaw_error", x: "t", y: "e_psi" },
    Panel { name: "torque", x: "t", y: "T_w" },
    Panel { name: "steer", x: "t", y: "delta" },
];

/// Writes one `<panel>.csv` per panel into `dir`. Every column is checked
/// before anything is written.
pub fn emit_plot_data(tel: &Telemetry, panels: &[Panel], dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let cols = panels
        .iter()
        .map(|p| Ok((tel.require(p.x)?, tel.require(p.y)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut written = Vec::with_capacity(panels.len());
    for (p, (ix, iy)) in panels.iter().zip(cols) {
        let mut text = format!("{},{}\n", p.x, p.y);
        for row in &tel.rows {
            let _ = writeln!(text, "{},{}", row[ix], row[iy]);
        }
        let path = dir.join(format!("{}.csv", p.name));
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn simulate(cfg: &ScenarioConfig, out: &Path, log: &Reporter) -> Result<(), Failure> {
    log.debug(format!("running {} on the {} plant", cfg.controller, cfg.perturbation.label()));
    let result = run_scenario(cfg).map_err(config_failure)?;
    write(&out.join("telemetry.csv"), &result.telemetry.to_csv())?;
    write(&out.join("metrics.txt"), &result.metrics_text())?;
    emit_plot_data(&result.telemetry, &PLOT_PANELS, &out.join("plots")).map_err(io_failure)?;
    log.info(format!(
        "{} {}: {}, lateral RMS {:.4} m, speed RMS {:.4} m/s",
        result.controller,
        result.variant,
        result.status,
        result.metrics.lateral_rms,
        result.metrics.speed_rms
    ));
    if result.status.is_completed() {
        Ok(())
    } else {
        Err(Failure::Fault(result.status.to_string()))
    }
}

fn slug(label: &str) -> String {
    label.replace(' ', "_").replace('=', "")
}

/// Failed cells are part of the table, so they do not change the exit status.
fn compare(cfg: &ScenarioConfig, out: &Path, log: &Reporter) -> Result<(), Failure> {
    let table = compare_controllers(cfg).map_err(config_failure)?;
    write(&out.join("comparison.csv"), &table.to_csv())?;
    for e in &table.entries {
        let dir = out.join(slug(&e.variant())).join(e.controller.as_str());
        match &e.outcome {
            Ok(r) => {
                fs::create_dir_all(&dir)
                    .with_context(|| format!("cannot create {}", dir.display()))
                    .map_err(io_failure)?;
                write(&dir.join("metrics.txt"), &r.metrics_text())?;
                emit_plot_data(&r.telemetry, &PLOT_PANELS, &dir.join("plots")).map_err(io_failure)?;
                log.info(format!(
                    "{:>14} {:<12} rank {}: {}, lateral RMS {:.4} m",
                    e.variant(),
                    e.controller,
                    e.rank,
                    r.status,
                    r.metrics.lateral_rms
                ));
            }
            Err(reason) => log.info(format!(
                "{:>14} {:<12} rank {}: not run ({reason})",
                e.variant(),
                e.controller,
                e.rank
            )),
        }
    }
    Ok(())
}

/// Columns of an estimator input file.
struct Series {
    t: Vec<f64>,
    y: Vec<f64>,
    u: Option<Vec<f64>>,
}

/// Reads `t,y[,u]` rows; columns are found by header name.
fn read_series(path: &Path) -> Result<Series, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read input {}: {e}", path.display())))?;
    let tel = Telemetry::from_csv(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let column = |name: &str| -> Result<Vec<f64>, Failure> {
        tel.values(name)
            .map(|v| v.collect())
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    };
    let u = if tel.column("u").is_some() { Some(column("u")?) } else { None };
    Ok(Series { t: column("t")?, y: column("y")?, u })
}

fn estimate_test(cfg: &ScenarioConfig, input: &Path, out: &Path, log: &Reporter) -> Result<(), Failure> {
    let Series { t, y, u } = read_series(input)?;
    if t.len() < 2 {
        return Err(Failure::Config(format!("{}: need at least two rows", input.display())));
    }
    let period = t[1] - t[0];
    let s = cfg.estimate;
    let mut yw = SlidingWindow::new(period, s.span).map_err(config_failure)?;
    let mut uw = SlidingWindow::new(period, s.span).map_err(config_failure)?;
    let mut text = String::from(if u.is_some() { "t,y_denoised,y_dot,F\n" } else { "t,y_denoised,y_dot\n" });
    let field = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for k in 0..t.len() {
        let row_err = |e: flatdrive::estimation::EstimationError| {
            Failure::Config(format!("{}: row {}: {e}", input.display(), k + 2))
        };
        yw.push(t[k], y[k]).map_err(row_err)?;
        let (d, dy) = if yw.is_warm() {
            (Some(denoise(&yw).map_err(row_err)?), Some(differentiate(&yw).map_err(row_err)?))
        } else {
            (None, None)
        };
        let _ = write!(text, "{},{},{}", t[k], field(d), field(dy));
        if let Some(u) = &u {
            uw.push(t[k], u[k]).map_err(row_err)?;
            let f = if yw.is_warm() {
                Some(match s.order {
                    Order::First => estimate_f_order1(&yw, &uw, s.alpha),
                    Order::Second => estimate_f_order2(&yw, &uw, s.alpha),
                }
                .map_err(row_err)?)
            } else {
                None
            };
            let _ = write!(text, ",{}", field(f));
        }
        text.push('\n');
    }
    write(&out.join("estimates.csv"), &text)?;
    log.info(format!("estimated {} rows (span {} s, period {period} s)", t.len(), s.span));
    Ok(())
}

fn gen_track(cfg: &ScenarioConfig, out: &Path, log: &Reporter) -> Result<(), Failure> {
    let prep = PreparedScenario::new(cfg).map_err(config_failure)?;
    let mut track = String::from("s,X,Y,psi,kappa,V\n");
    for (p, v) in prep.track.samples() {
        let _ = writeln!(track, "{},{},{},{},{},{}", p.s, p.x, p.y, p.psi, p.kappa, v);
    }
    write(&out.join("track.csv"), &track)?;
    let mut reference = String::from(
        "t,s,Vx_ref,Vx_dot_ref,X_ref,Y_ref,psi_ref,kappa,y1_ref,y1_dot_ref,y2_ref,y2_dot_ref,y2_ddot_ref\n",
    );
    for (r, f) in prep.reference.samples().iter().zip(&prep.flat) {
        let _ = writeln!(
            reference,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t, r.s, r.vx, r.vx_dot, r.x, r.y, r.psi, r.kappa, f.y1, f.y1_dot, f.y2, f.y2_dot, f.y2_ddot
        );
    }
    write(&out.join("reference.csv"), &reference)?;
    log.info(format!(
        "track {:.1} m, reference {:.1} s ({} samples)",
        prep.track.length(),
        prep.reference.duration(),
        prep.reference.len()
    ));
    Ok(())
}
