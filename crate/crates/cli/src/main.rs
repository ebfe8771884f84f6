use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swingvolt::scenario::{
    preset_config, preset_names, run_config, run_sweep, Analysis, ConfigError, Overrides,
    ScenarioConfig, ScenarioOutcome, SweepOutcome, VariantStatus,
};
use swingvolt::{Error, EXIT_CONFIG, EXIT_OK};

/// Simulation and stability analysis of synchronous machine networks.
#[derive(Debug, Parser)]
#[command(name = "swingvolt", version)]
struct Cli {
    /// Directory for output files (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Integrator step in seconds.
    #[arg(long, global = true, value_name = "SECONDS", allow_hyphen_values = true)]
    dt: Option<f64>,
    /// End time of the simulation in seconds.
    #[arg(long, global = true, value_name = "SECONDS", allow_hyphen_values = true)]
    t_final: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a scenario and write its trajectory.
    Simulate { config: PathBuf },
    /// Locate the fixed point and report its linear stability.
    Stability { config: PathBuf },
    /// Network means, closed-form bulk dynamics and voltage bounds.
    Bulk { config: PathBuf },
    /// Return time of the mean voltage after the last power ramp.
    ReturnTime { config: PathBuf },
    /// Run a built-in experiment (fig1 ... fig6).
    Preset { name: String },
    /// Run every grid point of a config's [sweep] section.
    Sweep { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig, Error> {
    // an unreadable input is a config problem, not an output failure
    ScenarioConfig::from_file(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(ConfigError::Parse(format!(
            "cannot read {}: {source}",
            path.display()
        ))),
        other => other,
    })
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn print_outcome(o: &ScenarioOutcome) {
    if let Some(m) = &o.means {
        let last = m.len() - 1;
        println!(
            "{}: t = {}, theta_bar = {:.6e}, omega_bar = {:.6e}, E_bar = {:.6}",
            o.name, m.times[last], m.theta[last], m.omega[last], m.voltage[last]
        );
    }
    if let Some(r) = &o.return_time {
        match r.return_time {
            Some(t) => println!("{}: return time {t}", o.name),
            None => println!("{}: mean voltage did not settle", o.name),
        }
    }
    if let Some(s) = &o.stability {
        println!(
            "{}: {:?}, spectral abscissa {:.6e}, conditions ({}, {})",
            o.name,
            s.verdict,
            s.spectral_abscissa_excl_gauge,
            s.proposition_condition_1,
            s.proposition_condition_2
        );
    }
    print_files(&o.files);
}

fn report_sweep(outcome: &SweepOutcome) -> i32 {
    for row in &outcome.rows {
        match &row.status {
            VariantStatus::Ok => println!("{}: ok", row.label),
            VariantStatus::Failed { message, .. } => eprintln!("{}: {message}", row.label),
        }
    }
    print_files(&outcome.files);
    outcome.failure_code().unwrap_or(EXIT_OK)
}

fn single(path: &Path, overrides: &Overrides, analysis: Analysis) -> Result<i32, Error> {
    let cfg = load(path)?;
    let outcome = run_config(&cfg, overrides, Some(vec![analysis]))?;
    print_outcome(&outcome);
    Ok(EXIT_OK)
}

fn run(cli: Cli) -> Result<i32, Error> {
    let overrides = Overrides {
        out_dir: cli.out_dir,
        dt: cli.dt,
        t_final: cli.t_final,
    };
    match cli.command {
        Command::Simulate { config } => single(&config, &overrides, Analysis::Simulate),
        Command::Stability { config } => single(&config, &overrides, Analysis::Stability),
        Command::Bulk { config } => single(&config, &overrides, Analysis::Bulk),
        Command::ReturnTime { config } => single(&config, &overrides, Analysis::ReturnTime),
        Command::Preset { name } => {
            let cfg = preset_config(&name).inspect_err(|e| {
                if matches!(e, ConfigError::UnknownPreset(_)) {
                    eprintln!("available presets: {}", preset_names().join(", "));
                }
            })?;
            Ok(report_sweep(&run_sweep(&cfg, &overrides)?))
        }
        Command::Sweep { config } => Ok(report_sweep(&run_sweep(&load(&config)?, &overrides)?)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.dt.is_some_and(|dt| !(dt > 0.0)) || cli.t_final.is_some_and(|t| !(t > 0.0)) {
        eprintln!("error: --dt and --t-final must be positive");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
