use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use radioloc::channel::ArrayGeometry;
use radioloc::harness::{self, ScenarioConfig};
use radioloc::resolution::resolution_limits;
use radioloc::{Error, Result};

#[derive(Parser)]
#[command(name = "radioloc", version, about = "Radio localization and sensing bounds, estimators and sweeps")]
struct Cli {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte-Carlo trials per point, overrides the config.
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Delay CRBs of the case study per bandwidth, or a PEB/OEB raster with --map.
    Bound {
        #[arg(long)]
        map: bool,
    },
    /// Detections of every trial at one sweep bandwidth.
    Simulate {
        #[arg(long, default_value_t = 7)]
        bandwidth_index: usize,
    },
    /// Full case-study sweep; also writes `<out>.plot.csv` and `<out>.meta.toml`.
    Sweep,
    /// Resolution limits at the sweep bandwidths.
    Resolve,
    /// One-point SNR calibration.
    Calibrate,
}

fn load(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `write` against `--out`, or a temporary file echoed to stdout.
fn with_output(out: &Option<PathBuf>, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => write(p),
        None => {
            let dir = std::env::temp_dir().join(format!("radioloc-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
            let p = dir.join("out.csv");
            write(&p)?;
            let text = std::fs::read_to_string(&p).map_err(|source| Error::Io { path: p.clone(), source })?;
            print!("{text}");
            let _ = std::fs::remove_dir_all(&dir);
            Ok(())
        }
    }
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Calibrate => {
            let c = harness::resolve_snr(&cfg)?;
            print!("{}", toml::to_string(&c).map_err(|e| Error::Config(e.to_string()))?);
            Ok(())
        }
        Command::Resolve => {
            let rows: Vec<Vec<String>> = cfg
                .case_study
                .bandwidths_hz
                .iter()
                .map(|&w| {
                    let grid = harness::sweep_grid(&cfg, w)?;
                    let r = resolution_limits(&grid, &ArrayGeometry::single());
                    Ok(vec![format!("{w:.16e}"), format!("{:.16e}", r.delay_res), format!("{:.16e}", r.distance_res())])
                })
                .collect::<Result<_>>()?;
            with_output(&cli.out, |p| write_rows(p, &["bandwidth_Hz", "delay_resolution_s", "distance_resolution_m"], &rows))
        }
        Command::Bound { map: false } => {
            let c = harness::resolve_snr(&cfg)?;
            let curves = harness::crb_curves(&cfg, &c)?;
            if curves.iter().any(|p| !p.crb_single_m.is_finite()) {
                return Err(Error::NonIdentifiable(vec!["single-path delay".into()]));
            }
            let rows: Vec<Vec<String>> = curves
                .iter()
                .map(|p| {
                    vec![
                        format!("{:.16e}", p.bandwidth),
                        format!("{:.16e}", p.crb_single_m),
                        format!("{:.16e}", p.crb_multi_m),
                        p.multi_identifiable.to_string(),
                        format!("{:.16e}", p.multi_condition),
                    ]
                })
                .collect();
            with_output(&cli.out, |path| {
                write_rows(
                    path,
                    &["bandwidth_Hz", "crb_1path_m", "crb_all_paths_m", "crb_all_paths_identifiable", "fim_condition"],
                    &rows,
                )
            })
        }
        Command::Bound { map: true } => {
            let m = harness::run_bound_map(&cfg.bound_map, cfg.seed)?;
            with_output(&cli.out, |p| harness::emit_bound_map_csv(&m, p))?;
            if m.cells.iter().all(|c| !c.identifiable) {
                return Err(Error::NonIdentifiable(vec!["position at every raster point".into()]));
            }
            Ok(())
        }
        Command::Simulate { bandwidth_index } => {
            let c = harness::resolve_snr(&cfg)?;
            let rows = harness::simulate_detections(&cfg, &c, *bandwidth_index)?;
            with_output(&cli.out, |p| radioloc::estimation::write_detections_csv(p, &rows))
        }
        Command::Sweep => {
            let result = harness::run_case_study(&cfg)?;
            if !result.meta.reference_comparable {
                eprintln!("note: fixed SNR, results are not calibrated to the reference curve");
            }
            with_output(&cli.out, |p| harness::emit_csv(&result, p))?;
            if let Some(out) = &cli.out {
                harness::emit_plot_data(&result, &sidecar(out, ".plot.csv"))?;
                harness::emit_meta(&result.meta, &sidecar(out, ".meta.toml"))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::NonIdentifiable(_) => 3,
                _ => 1,
            })
        }
    }
}
