use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tunnelscout::config::{parse_scenario, serialize_scenario};
use tunnelscout::sim::{run_scenario, trajectory_csv, RunReport, Scenario, Termination, WindLevel};
use tunnelscout::wind::{calibrate, run_wind_test, DriftReport, WindCalibration, WindTestConfig, WindTestMode, CALIBRATION_SEEDS};

#[derive(Parser)]
#[command(name = "tunnelscout", version, about = "Tunnel exploration planner and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trajectory.csv, map.txt and report.toml.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run this many consecutive seeds, each into its own seed-N directory.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Hovering or going-straight wind test.
    Windtest {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        level: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Calibrate noise and gain first and store the result in the output directory.
        #[arg(long)]
        calibrate: bool,
        /// Calibration file; defaults to <out>/calibration.toml.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Print built-in data.
    Export {
        what: ExportKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    DefaultConfig,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    report: &'a RunReport,
    scenario: &'a Scenario,
}

#[derive(Serialize)]
struct DriftFile<'a> {
    drift: &'a DriftReport,
    calibration: &'a WindCalibration,
}

/// Write to a sibling temp file then rename over the target.
fn write_atomic(path: &Path, data: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, data).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn run_one(sc: &Scenario, out: &Path) -> Result<RunReport> {
    fs::create_dir_all(out)?;
    let run = run_scenario(sc)?;
    write_atomic(&out.join("trajectory.csv"), &trajectory_csv(&run.trajectory))?;
    write_atomic(&out.join("map.txt"), &run.map.export_text())?;
    let file = ReportFile { report: &run.report, scenario: sc };
    write_atomic(&out.join("report.toml"), &toml::to_string(&file)?)?;
    Ok(run.report)
}

fn exit_code(reports: &[RunReport]) -> u8 {
    if reports.iter().any(|r| r.collision_count > 0) {
        3
    } else if reports.iter().any(|r| r.termination == Termination::Timeout) {
        2
    } else {
        0
    }
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>, seeds: Option<u64>, jobs: usize) -> Result<u8> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut base = match parse_scenario(&text) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return Ok(1);
        }
    };
    if let Some(s) = seed {
        base.rng_seed = s;
    }
    let reports = match seeds {
        None => vec![run_one(&base, out)?],
        Some(n) => {
            let list: Vec<u64> = (0..n).map(|k| base.rng_seed + k).collect();
            let chunk = list.len().div_ceil(jobs.max(1)).max(1);
            let results: Vec<Result<Vec<RunReport>>> = std::thread::scope(|s| {
                let handles: Vec<_> = list
                    .chunks(chunk)
                    .map(|part| {
                        let base = &base;
                        s.spawn(move || {
                            part.iter()
                                .map(|&sd| {
                                    let sc = Scenario { rng_seed: sd, ..base.clone() };
                                    run_one(&sc, &out.join(format!("seed-{sd}")))
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect()
        }
    };
    for r in &reports {
        println!(
            "seed {}: {:?} in {:.1} s, end distance {:.2} m, coverage {:.1}%, return error {:.3} m, collisions {}",
            r.seed,
            r.termination,
            r.sim_duration,
            r.min_dead_end_distance,
            100.0 * r.coverage_fraction,
            r.returned_to_start_error,
            r.collision_count
        );
    }
    Ok(exit_code(&reports))
}

fn cmd_windtest(
    mode: &str,
    level: &str,
    out: &Path,
    seed: u64,
    do_calibrate: bool,
    calibration: Option<PathBuf>,
) -> Result<u8> {
    let (mode, level) = match (mode.parse::<WindTestMode>(), level.parse::<WindLevel>()) {
        (Ok(m), Ok(l)) => (m, l),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return Ok(1);
        }
    };
    fs::create_dir_all(out)?;
    let cal_path = calibration.unwrap_or_else(|| out.join("calibration.toml"));
    let base = WindTestConfig::new(mode, level, seed);
    let cal = if do_calibrate {
        let cal = calibrate(&base, &CALIBRATION_SEEDS)?;
        write_atomic(&cal_path, &toml::to_string(&cal)?)?;
        cal
    } else {
        let Ok(text) = fs::read_to_string(&cal_path) else {
            eprintln!("error: calibration file {} not found; pass --calibrate", cal_path.display());
            return Ok(1);
        };
        match toml::from_str::<WindCalibration>(&text) {
            Ok(c) => c,
            Err(e) => bail!("bad calibration file {}: {e}", cal_path.display()),
        }
    };
    let cfg = base.with_noise(cal.noise_force);
    let report = run_wind_test(&cfg, cal.gain)?;
    write_atomic(&out.join("trajectory.csv"), &report.trajectory_csv())?;
    write_atomic(&out.join("drift.toml"), &toml::to_string(&DriftFile { drift: &report, calibration: &cal })?)?;
    println!("{}", DriftReport::table_header(mode));
    println!("{}", report.table_row());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUNNELSCOUT_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, seeds, jobs } => cmd_run(&config, &out, seed, seeds, jobs),
        Command::Windtest { mode, level, out, seed, calibrate, calibration } => {
            cmd_windtest(&mode, &level, &out, seed, calibrate, calibration)
        }
        Command::Export { what: ExportKind::DefaultConfig } => {
            print!("{}", serialize_scenario(&Scenario::reference_tunnel(0)));
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
