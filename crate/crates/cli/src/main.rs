use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ghostrec::config::ExperimentConfig;
use ghostrec::io::PgmImage;
use ghostrec::metrics::{mse, normalized_cross_correlation, psnr_from_mse, two_peak_resolvability, ProfileAxis};
use ghostrec::scenario::{self, Figure, RunOutcome};
use ghostrec::solver::BasisKind;
use ghostrec::Error;

/// Lensless ghost imaging simulator with correlation and sparse reconstruction.
#[derive(Debug, Parser)]
#[command(name = "ghostrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Acquire, reconstruct both ways and write a run directory.
    Run(RunArgs),
    /// Acquire only: writes the ensemble dump, truth, mean pattern and resolved.cfg.
    Simulate(RunArgs),
    /// Reconstruct from an ensemble dump written by `simulate`.
    Reconstruct {
        /// Ensemble dump.
        ensemble: PathBuf,
        /// Config (defaults to resolved.cfg next to the dump).
        #[arg(long)]
        config: Option<PathBuf>,
        /// cartesian or dct2; nonnegativity follows the basis.
        #[arg(long)]
        basis: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        /// Use only the first K realizations.
        #[arg(long = "K", short = 'K')]
        k: Option<usize>,
        /// Output directory (defaults to `reconstruct` next to the dump).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the images of a run directory against its truth.
    Evaluate {
        run_dir: PathBuf,
    },
    /// Run a figure sweep and write cells.csv and summary.csv.
    Reproduce {
        /// fig2, fig3 or fig4.
        figure: String,
        /// Base config for solver, grid and seed settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// `key = value` config file.
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    Pipeline(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let config_error = match &e {
            Error::ConfigParse { .. } | Error::ConfigInvalid { .. } => true,
            Error::Stage { stage, .. } => *stage == "config",
            _ => false,
        };
        if config_error {
            Failure::Config(e.to_string())
        } else {
            Failure::Pipeline(e.to_string())
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report(outcome: &RunOutcome) {
    let m = &outcome.metrics;
    println!("rho {:.4e}", m.rho);
    println!("gi   mse {:.5}  resolved {:?}", m.gi_mse, m.gi_resolved);
    println!(
        "gisc mse {:.5}  resolved {:?}  dip {:?}  iterations {}  kkt {}",
        m.gisc_mse, m.gisc_resolved, m.gisc_dip, m.iterations, m.kkt_passed
    );
    if let (Some(p), Some(e)) = (m.fringe_period, m.expected_fringe_period) {
        println!("fringe period {p:.4e} m (expected {e:.4e} m)");
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    scenario::init_thread_pool_from_env()?;
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve(&args)?;
            let outcome = scenario::run_scenario(&cfg)?;
            report(&outcome);
            println!("wrote {}", cfg.output.display());
        }
        Command::Simulate(args) => {
            let cfg = resolve(&args)?;
            scenario::simulate(&cfg)?;
            println!("wrote {}", cfg.output.display());
        }
        Command::Reconstruct {
            ensemble,
            config,
            basis,
            tau,
            k,
            out,
        } => {
            let dump_dir = ensemble.parent().unwrap_or(Path::new("."));
            let mut cfg = load_config(&config.unwrap_or_else(|| dump_dir.join("resolved.cfg")))?;
            if let Some(name) = basis {
                let kind = BasisKind::parse(&name)
                    .ok_or_else(|| Failure::Config(format!("unknown basis `{name}`, expected cartesian or dct2")))?;
                cfg.basis = kind;
                cfg.solver.nonneg_project = kind == BasisKind::Cartesian;
            }
            if let Some(tau) = tau {
                cfg.solver.tau = tau;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            cfg.output = out.unwrap_or_else(|| dump_dir.join("reconstruct"));
            let outcome = scenario::reconstruct_dump(&cfg, &ensemble)?;
            report(&outcome);
            println!("wrote {}", cfg.output.display());
        }
        Command::Evaluate { run_dir } => {
            let cfg = load_config(&run_dir.join("resolved.cfg"))?;
            let truth = PgmImage::read(&run_dir.join("truth.pgm"))?.to_values();
            for name in ["gi", "gisc"] {
                let image = PgmImage::read(&run_dir.join(format!("{name}.pgm")))?.to_values();
                let err = mse(image.view(), truth.view())?;
                let ncc = normalized_cross_correlation(image.view(), truth.view())?;
                print!("{name:<5} mse {err:.6}  psnr {:.3} dB  ncc {ncc:.4}", psnr_from_mse(err));
                if let Some(band) = scenario::slit_band(&cfg, image.nrows()) {
                    match two_peak_resolvability(image.view(), ProfileAxis::Horizontal, band, cfg.camera_pitch) {
                        Ok(r) => print!(
                            "  resolved {}  dip {}  separation {}",
                            r.resolved,
                            r.dip_ratio.map_or("-".into(), |d| format!("{d:.3}")),
                            r.peak_separation.map_or("-".into(), |d| format!("{d:.3e} m"))
                        ),
                        Err(e) => print!("  resolved false ({e})"),
                    }
                }
                println!();
            }
        }
        Command::Reproduce {
            figure,
            config,
            seeds,
            out,
        } => {
            let figure = Figure::parse(&figure)
                .ok_or_else(|| Failure::Config(format!("unknown figure `{figure}`, expected fig2, fig3 or fig4")))?;
            let mut base = match config {
                Some(path) => load_config(&path)?,
                None => ExperimentConfig::default(),
            };
            base.output = out.unwrap_or_else(|| PathBuf::from(figure.name()));
            for cell in scenario::reproduce(figure, &base, seeds)? {
                println!(
                    "{:<28} gisc mse {:.5}  gi mse {:.5}  gisc resolved {}/{}  rho {:.3e}",
                    cell.label, cell.mean_gisc_mse, cell.mean_gi_mse, cell.gisc_resolved, cell.seeds, cell.mean_rho
                );
            }
            println!("wrote {}", base.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
