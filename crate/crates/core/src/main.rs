use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cobras::bench::{run_scenario, spectrum, Estimator, ScenarioConfig};
use cobras::CobrasError;

#[derive(Parser)]
#[command(
    name = "cobras",
    version,
    about = "Sparse direction finding for partly calibrated arrays"
)]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a Monte Carlo scenario and writes the result table as CSV.
    Run {
        config: PathBuf,
        /// Output file; defaults to the config's output or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// cobras-grid, cobras-gridless or lnuc1-reference.
        #[arg(long)]
        estimator: Option<Estimator>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Writes `(nu, power)` pairs of one trial's spectrum as CSV.
    Spectrum {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open_output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn execute(cli: Cli) -> cobras::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
            estimator,
            tolerance,
        } => {
            let mut cfg = ScenarioConfig::from_path(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = estimator {
                cfg.estimator = e;
            }
            if let Some(t) = tolerance {
                cfg.tolerance = Some(t);
            }
            cfg.validate()?;
            let result = run_scenario(&cfg)?;
            let mut w = open_output(out.as_ref().or(cfg.output.as_ref()))?;
            result.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Spectrum { config, out } => {
            let cfg = ScenarioConfig::from_path(&config)?;
            let pairs = spectrum(&cfg)?;
            let mut w = open_output(out.as_ref())?;
            writeln!(w, "nu,power")?;
            for (nu, p) in pairs {
                writeln!(w, "{nu},{p}")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CobrasError::Aborted { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
