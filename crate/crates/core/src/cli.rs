//! Command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 solver failure,
//! 3 sweep stalled before its stop bias (partial results written),
//! 4 output I/O failure.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, RunConfig};
use crate::error::Error;
use crate::gummel::{DeviceState, Simulator, SweepPoint, SweepResult};
use crate::jrecon::ReconstructionMethod;
use crate::output::export_iv_csv;
use crate::vtk::{export_vtk, DeviceFields};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_STALL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ddfem", version, about = "3D finite-element drift-diffusion device simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Current reconstruction method: ddfe, method_a or method_b.
    #[arg(long, value_name = "NAME", value_parser = parse_method)]
    method: Option<ReconstructionMethod>,
    /// Overrides the configured output directory.
    #[arg(long, value_name = "PATH")]
    output_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, value_name = "LEVEL", default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one bias point and write its fields.
    Simulate(Common),
    /// Run the configured bias sweep, writing the I-V table and field dumps.
    Sweep(Common),
    /// Validate the configuration only.
    Check(Common),
}

fn parse_method(s: &str) -> Result<ReconstructionMethod, String> {
    ReconstructionMethod::parse(s).ok_or_else(|| format!("unknown method `{s}` (expected ddfe, method_a or method_b)"))
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "{} {}", record.level(), record.args()))
        .try_init();
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigParse(_) | Error::Config { .. } | Error::UnknownContact(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_SOLVER,
    }
}

fn report(e: &Error, code: i32) -> i32 {
    let kind = match code {
        EXIT_USAGE => "config",
        EXIT_IO => "io",
        _ => "solver",
    };
    let msg = e.to_string().replace('"', "'").replace('\n', " ");
    eprintln!("ERROR event=exit code={code} kind={kind} message=\"{msg}\"");
    code
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (common, kind) = match &cli.command {
        Command::Simulate(c) => (c, "simulate"),
        Command::Sweep(c) => (c, "sweep"),
        Command::Check(c) => (c, "check"),
    };
    init_logging(common.log_level);
    // a config that cannot be read is a usage error, not an output failure
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e @ Error::Io { .. }) => return report(&e, EXIT_USAGE),
        Err(e) => return report(&e, exit_code(&e)),
    };
    let result = match kind {
        "check" => check(&cfg),
        "simulate" => simulate(&cfg, common),
        _ => sweep(&cfg, common),
    };
    match result {
        Ok(code) => code,
        Err(e) => report(&e, exit_code(&e)),
    }
}

fn check(cfg: &RunConfig) -> Result<i32, Error> {
    let (sim, _) = cfg.build_simulator(None)?;
    log::info!(
        "event=config_ok vertices={} elements={} contacts={} swept={}",
        sim.mesh().num_vertices(),
        sim.mesh().num_elements(),
        sim.contact_names().join(","),
        cfg.swept().map_or("none", |(c, _)| c.name.as_str())
    );
    Ok(EXIT_OK)
}

fn output_dir(cfg: &RunConfig, common: &Common) -> Result<PathBuf, Error> {
    let dir = common.output_dir.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn dump(sim: &Simulator, state: &DeviceState, path: &Path, title: &str) -> Result<(), Error> {
    let fields = DeviceFields::compute(sim, state, sim.options().method)?;
    export_vtk(path, sim.mesh(), &fields, title)?;
    log::info!("event=vtk_written path={}", path.display());
    Ok(())
}

fn simulate(cfg: &RunConfig, common: &Common) -> Result<i32, Error> {
    let (sim, biases) = cfg.build_simulator(common.method)?;
    let dir = output_dir(cfg, common)?;
    let s0 = sim.initial_state(&biases)?;
    let sol = sim.solve_bias_point(&s0, &biases)?;
    let currents = sim.terminal_currents(&sol.state)?;
    for (name, i) in sim.contact_names().iter().zip(&currents) {
        log::info!("event=terminal_current contact={name} current={i:e}");
    }
    let bias = cfg.swept().and_then(|(c, _)| sim.contact_index(&c.name).ok()).map_or(0.0, |k| biases[k]);
    let result = SweepResult {
        contact: cfg.swept().map_or_else(String::new, |(c, _)| c.name.clone()),
        contact_names: sim.contact_names().to_vec(),
        points: vec![SweepPoint {
            bias,
            currents,
            iterations: sol.iterations,
            converged: true,
            step: 0.0,
            min_densities: sol.min_densities,
        }],
        reductions: 0,
        stalled: false,
        final_state: sol.state,
    };
    export_iv_csv(&result, &dir.join("currents.csv"))?;
    dump(&sim, &result.final_state, &dir.join("fields.vtk"), "ddfem simulate")?;
    Ok(EXIT_OK)
}

fn sweep(cfg: &RunConfig, common: &Common) -> Result<i32, Error> {
    let Some((contact, program)) = cfg.swept() else {
        return Err(Error::Config { path: "contacts".into(), reason: "sweep needs exactly one contact with a `sweep` table".into() });
    };
    let (sim, biases) = cfg.build_simulator(common.method)?;
    let dir = output_dir(cfg, common)?;
    let s0 = sim.initial_state(&biases)?;
    let schedule = &cfg.output.dump;
    let mut index = 0usize;
    let mut last_written = None;
    let result = sim.bias_sweep_with(&s0, &contact.name, program.start, program.stop, program.step, program.min_step, |p, state| {
        let at_stop = (p.bias - program.stop).abs() <= 1e-12 * program.step;
        if schedule.wants(p.bias, at_stop) {
            let path = dir.join(format!("fields_{index:04}.vtk"));
            dump(&sim, state, &path, &format!("ddfem sweep {}={}", contact.name, p.bias))?;
            last_written = Some(index);
        }
        index += 1;
        Ok(())
    })?;
    let last = result.points.len() - 1;
    if schedule.wants(result.points[last].bias, true) && last_written != Some(last) {
        let path = dir.join(format!("fields_{last:04}.vtk"));
        dump(&sim, &result.final_state, &path, &format!("ddfem sweep {}={}", contact.name, result.points[last].bias))?;
    }
    export_iv_csv(&result, &dir.join("iv.csv"))?;
    log::info!(
        "event=sweep_done contact={} points={} reductions={} stalled={}",
        contact.name,
        result.points.len(),
        result.reductions,
        result.stalled
    );
    Ok(if result.stalled { EXIT_STALL } else { EXIT_OK })
}
