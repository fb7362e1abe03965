//! `weylsim` command-line runner.
//!
//! Exit status: 0 when every check passes, 1 when a check fails or a run
//! cannot complete, 2 for configuration and usage errors.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weylsim::scenarios::{run, ScenarioName};

use config::{load_scenario, ConfigFile, Overrides, Section};
use output::{write_result, Format, Timestamps};

#[derive(Parser, Debug)]
#[command(
    name = "weylsim",
    version,
    about = "Trapped-ion Weyl particle simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file with per-scenario sections
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "weylsim-out")]
    out: PathBuf,

    /// Run the Landau scenario without motional dephasing
    #[arg(long, global = true)]
    no_noise: bool,

    /// Fock cutoff for every mode, overriding the config
    #[arg(long, global = true, value_name = "N")]
    n_max: Option<usize>,

    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,

    /// Print nothing on success
    #[arg(long, global = true)]
    quiet: bool,

    /// Print the resolved configuration as TOML and exit without running
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Energy versus momentum of the free particle
    Dispersion,
    /// Spin dynamics and spectrum in a synthetic magnetic field
    Landau,
    /// Spin and kinetic-momentum directions
    Helicity,
    /// Position trajectories for opposite helicities
    Trajectory,
    /// All four scenarios, one subdirectory each
    All,
}

impl Command {
    fn scenarios(self) -> Vec<ScenarioName> {
        match self {
            Self::Dispersion => vec![ScenarioName::Dispersion],
            Self::Landau => vec![ScenarioName::Landau],
            Self::Helicity => vec![ScenarioName::Helicity],
            Self::Trajectory => vec![ScenarioName::Trajectory],
            Self::All => ScenarioName::ALL.to_vec(),
        }
    }
}

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("WEYLSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("WEYLSIM_THREADS must be a positive integer (got \"{raw}\")"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size the thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let file = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let ov = Overrides {
        no_noise: cli.no_noise,
        n_max: cli.n_max,
    };
    // resolve everything up front so a bad section fails before any run
    let mut jobs: Vec<(ScenarioName, Section, _)> = Vec::new();
    for name in cli.command.scenarios() {
        match load_scenario(file.as_ref(), name, ov) {
            Ok((resolved, cfg)) => jobs.push((name, resolved, cfg)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    if cli.print_config {
        let mut out = ConfigFile::default();
        for (name, resolved, _) in &jobs {
            out.set_section(*name, resolved.clone());
        }
        print!("{}", out.to_toml());
        return ExitCode::SUCCESS;
    }

    let mut all_passed = true;
    for (name, resolved, cfg) in &jobs {
        let dir = if cli.command == Command::All {
            cli.out.join(name.as_str())
        } else {
            cli.out.clone()
        };
        let started = chrono::Utc::now().to_rfc3339();
        let res = match run(cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {name} run failed: {e}");
                all_passed = false;
                continue;
            }
        };
        let times = Timestamps {
            started,
            finished: chrono::Utc::now().to_rfc3339(),
        };
        if let Err(e) = write_result(&res, resolved, &dir, cli.format, &times) {
            eprintln!("error: {name}: {e:#}");
            all_passed = false;
            continue;
        }
        let passed = res.checks.iter().filter(|c| c.pass).count();
        if !res.all_passed() {
            all_passed = false;
        }
        if !cli.quiet {
            println!(
                "{name}: {passed}/{} checks passed in {:.2} s -> {}",
                res.checks.len(),
                res.manifest.wall_time_s,
                dir.display()
            );
            for c in &res.checks {
                let unit = c
                    .unit
                    .as_deref()
                    .map(|u| format!(" {u}"))
                    .unwrap_or_default();
                println!(
                    "  {} {:<28} actual {}{unit}  expected {:?} {}{}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    output::fmt_sig(c.actual),
                    c.comparison,
                    output::fmt_sig(c.expected),
                    if c.tolerance > 0.0 {
                        format!(" ± {}", output::fmt_sig(c.tolerance))
                    } else {
                        String::new()
                    },
                );
            }
        }
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}
