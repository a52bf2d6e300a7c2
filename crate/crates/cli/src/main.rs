//! Command-line front end: runs, sweeps, drift traces, budget tables and
//! calibration, driven by scenario TOML files or builtin presets.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bb84sim_core::error::Error;
use bb84sim_core::fiber::write_trajectory_csv;
use bb84sim_core::harness::{
    budget, builtin_scenario, calibrate_bandwidth, calibrate_ob, drift_trace, run_single_detailed,
    sweep_bandwidth, sweep_length, sweep_ob, write_sweep_csv, BandwidthAnchors, ObAnchors,
    PointAnchor, SweepResult,
};
use bb84sim_core::protocol::write_report_csv;
use bb84sim_core::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "bb84sim",
    about = "Photon-level BB84 link simulator for broadband incoherent sources",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores). Results are identical for any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML file, or `builtin:<name>` (available: ase-fig4,
    /// otf-100mhz, otf-1ghz, geonsi-demo, geonsi-demo-filtered, drift).
    #[arg(long)]
    scenario: String,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's symbol count.
    #[arg(long)]
    symbols: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end and print the QBER report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Also dump the frame and time-tag CSVs next to the report.
        #[arg(long)]
        dump: bool,
    },
    /// Sweep the optical budget (dB values).
    SweepOb {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated budget values in dB.
        #[arg(long, default_value = "0,3,6,9,12,15,18")]
        points: String,
    },
    /// Sweep the optical signal bandwidth (filter window, nm).
    SweepBandwidth {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated window widths in nm.
        #[arg(long, default_value = "1,1.5,2,5,10,16")]
        points: String,
    },
    /// Sweep the fiber length (km), averaging over channel seeds.
    SweepLength {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated lengths in km.
        #[arg(long, default_value = "0.007,0.25,0.5,1.0")]
        points: String,
        /// Channel realizations per length.
        #[arg(long, default_value_t = 8)]
        seeds: u64,
    },
    /// Emit a Poincaré drift trajectory CSV for probe wavelengths.
    DriftTrace {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 5.0)]
        duration_hours: f64,
        /// Sampling interval, hours.
        #[arg(long, default_value_t = 1.0 / 12.0)]
        step_hours: f64,
        /// Comma-separated probe wavelengths, nm.
        #[arg(long, default_value = "1570,1575,1580,1585")]
        lambdas: String,
    },
    /// Print the photon-budget table for an operating point.
    Budget {
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long, default_value_t = 1e8)]
        rate_hz: f64,
        #[arg(long, default_value_t = 1581.0)]
        lambda_nm: f64,
        /// Source output power, dBm.
        #[arg(long, default_value_t = -69.8)]
        source_dbm: f64,
    },
    /// Fit calibration parameters from measured anchors and write a
    /// pinned scenario file.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Calibration family: `ob` (budget curve) or `bandwidth`.
        #[arg(long)]
        family: String,
        /// QBER at the anchor operating point.
        #[arg(long)]
        anchor_qber: Option<f64>,
        /// Aggregate raw key at the anchor operating point, bit/s.
        #[arg(long)]
        anchor_raw_key: Option<f64>,
        /// `ob` family: budget at which QBER crosses the threshold, dB.
        #[arg(long)]
        crossing_db: Option<f64>,
        /// `bandwidth` family: QBER at the wide-filter fit point.
        #[arg(long)]
        fit_qber: Option<f64>,
        /// `bandwidth` family: wide-filter window, nm.
        #[arg(long)]
        fit_window_nm: Option<f64>,
    },
}

fn parse_points(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad point '{p}': {e}")))
        })
        .collect()
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, Error> {
    let mut sc = if let Some(name) = args.scenario.strip_prefix("builtin:") {
        builtin_scenario(name)?
    } else {
        Scenario::from_path(&args.scenario)?
    };
    if let Some(seed) = args.seed {
        sc.master_seed = seed;
    }
    if let Some(symbols) = args.symbols {
        sc.symbols = symbols;
    }
    sc.validate()?;
    Ok(sc)
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(body)?;
    Ok(())
}

fn save_sweep(result: &SweepResult, dir: &Path, stem: &str) -> Result<PathBuf, Error> {
    let mut buf = Vec::new();
    write_sweep_csv(result, &mut buf)?;
    let path = dir.join(format!("{stem}.csv"));
    write_file(&path, &buf)?;
    Ok(path)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { scenario, dump } => {
            let sc = load_scenario(&scenario)?;
            let out = run_single_detailed(&sc)?;
            print!("{out}");
            let provenance = format!(
                "scenario_hash={:016x} master_seed={}",
                out.scenario_hash, sc.master_seed
            );
            let mut buf = Vec::new();
            write_report_csv(&out.report, Some(&provenance), &mut buf)?;
            let path = scenario.out.join("report.csv");
            write_file(&path, &buf)?;
            eprintln!("wrote {}", path.display());
            if dump {
                dump_artifacts(&sc, &scenario.out, &provenance)?;
            }
        }
        Command::SweepOb { scenario, points } => {
            let sc = load_scenario(&scenario)?;
            let ob = parse_points(&points)?;
            let result = sweep_ob(&sc, &ob)?;
            let path = save_sweep(&result, &scenario.out, "sweep_ob")?;
            eprintln!("wrote {}", path.display());
        }
        Command::SweepBandwidth { scenario, points } => {
            let sc = load_scenario(&scenario)?;
            let windows = parse_points(&points)?;
            let result = sweep_bandwidth(&sc, &windows)?;
            let path = save_sweep(&result, &scenario.out, "sweep_bandwidth")?;
            eprintln!("wrote {}", path.display());
        }
        Command::SweepLength { scenario, points, seeds } => {
            let sc = load_scenario(&scenario)?;
            let lengths = parse_points(&points)?;
            let result = sweep_length(&sc, &lengths, seeds)?;
            let path = save_sweep(&result, &scenario.out, "sweep_length")?;
            eprintln!("wrote {}", path.display());
        }
        Command::DriftTrace { scenario, duration_hours, step_hours, lambdas } => {
            let sc = load_scenario(&scenario)?;
            let lams = parse_points(&lambdas)?;
            let samples = drift_trace(&sc, duration_hours, step_hours, &lams)?;
            let provenance = format!(
                "scenario_hash={:016x} master_seed={}",
                sc.hash(),
                sc.master_seed
            );
            let mut buf = Vec::new();
            write_trajectory_csv(&samples, Some(&provenance), &mut buf)?;
            let path = scenario.out.join("trajectory.csv");
            write_file(&path, &buf)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Budget { mu, rate_hz, lambda_nm, source_dbm } => {
            print!("{}", budget(mu, rate_hz, lambda_nm, source_dbm));
        }
        Command::Calibrate {
            scenario,
            family,
            anchor_qber,
            anchor_raw_key,
            crossing_db,
            fit_qber,
            fit_window_nm,
        } => {
            let base = load_scenario(&scenario)?;
            let pinned = match family.as_str() {
                "ob" => {
                    let defaults = ObAnchors::default();
                    let anchors = ObAnchors {
                        at_ob0: PointAnchor {
                            qber: anchor_qber.unwrap_or(defaults.at_ob0.qber),
                            raw_key_bps: anchor_raw_key.unwrap_or(defaults.at_ob0.raw_key_bps),
                        },
                        threshold_qber: defaults.threshold_qber,
                        crossing_ob_db: crossing_db.unwrap_or(defaults.crossing_ob_db),
                    };
                    calibrate_ob(&base, &anchors)?
                }
                "bandwidth" => {
                    let defaults = if base.protocol.rate_hz >= 1e9 {
                        BandwidthAnchors::rate_1ghz()
                    } else {
                        BandwidthAnchors::rate_100mhz()
                    };
                    let anchors = BandwidthAnchors {
                        baseline_window_nm: defaults.baseline_window_nm,
                        baseline: PointAnchor {
                            qber: anchor_qber.unwrap_or(defaults.baseline.qber),
                            raw_key_bps: anchor_raw_key.unwrap_or(defaults.baseline.raw_key_bps),
                        },
                        fit_window_nm: fit_window_nm.unwrap_or(defaults.fit_window_nm),
                        fit_qber: fit_qber.unwrap_or(defaults.fit_qber),
                    };
                    calibrate_bandwidth(&base, &anchors)?
                }
                other => {
                    return Err(Error::config(format!(
                        "unknown calibration family '{other}' (ob, bandwidth)"
                    )))
                }
            };
            let path = scenario.out.join(format!("{}-pinned.toml", pinned.name));
            write_file(&path, pinned.to_toml_string().as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn dump_artifacts(sc: &Scenario, dir: &Path, provenance: &str) -> Result<(), Error> {
    use bb84sim_core::encoder::write_frame_csv;
    use bb84sim_core::harness::alice_frame;
    let frame = alice_frame(sc, Some(100_000))?;
    let mut buf = Vec::new();
    writeln!(buf, "# {provenance}")?;
    write_frame_csv(&frame, sc.encoder.basis_set, &mut buf)?;
    write_file(&dir.join("frame.csv"), &buf)?;
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::InvalidSpectrum(_) | Error::Calibration(_) => 2,
        Error::SyncFailure(_) => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
