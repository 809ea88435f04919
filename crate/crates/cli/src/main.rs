use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levy_ou::harness::{run_experiment, ExperimentConfig, Scenario};

#[derive(Parser)]
#[command(name = "levy-ou", version, about = "Densities and simulation of Levy-driven Ornstein-Uhlenbeck processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the normalized config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Kalman rank condition and Gramian floor.
    RankCheck,
    /// Small-ball moment lower bound of the jump measure.
    Hypothesis,
    /// Characteristic function table and decay fit.
    Charfn,
    /// Density grid by Fourier inversion.
    Density,
    /// Endpoint samples.
    Simulate,
    /// Samples against the density grid.
    Validate,
    /// Kolmogorov path scheme against the characteristic function.
    Kolmogorov,
}

impl Command {
    fn scenario(self) -> Scenario {
        match self {
            Command::RankCheck => Scenario::RankCheck,
            Command::Hypothesis => Scenario::Hypothesis,
            Command::Charfn => Scenario::Charfn,
            Command::Density => Scenario::Density,
            Command::Simulate => Scenario::Simulate,
            Command::Validate => Scenario::Validate,
            Command::Kolmogorov => Scenario::Kolmogorov,
        }
    }
}

fn run(cli: &Cli) -> levy_ou::Result<i32> {
    let path = cli.config.as_ref().ok_or_else(|| levy_ou::Error::Config {
        path: "--config".into(),
        msg: "a config file is required".into(),
    })?;
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.scenario = cli.command.scenario();
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    // the subcommand may impose requirements the file's own scenario did not
    cfg.validate()?;
    if cli.print_config {
        println!("{}", cfg.to_json());
        return Ok(0);
    }
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_text());
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
