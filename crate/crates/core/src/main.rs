use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use torus_nls::lab::config::load_config;
use torus_nls::lab::{run_to_dir, Scenario};
use torus_nls::Error;

/// Cubic NLS on rectangular 4-tori: simulator and verification lab.
#[derive(Debug, Parser)]
#[command(name = "torus-nls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the flow and write diagnostics and snapshots.
    Evolve(Common),
    /// Ground-state constants as JSON.
    GroundState(Common),
    /// Critical norms of a trajectory written by `evolve`.
    Norms(Common),
    /// Profile constructions.
    Profiles {
        #[command(subcommand)]
        verb: ProfileVerb,
    },
    /// Energy trapping along a focusing flow.
    Trapping(Common),
    /// Strichartz exponent fits.
    Strichartz(Common),
    /// Bilinear exponent fit.
    Bilinear(Common),
    /// Extinction curves of rescaled profiles.
    Extinction(Common),
    /// Orthogonality of profiles along two frames.
    #[command(name = "profile_suite", alias = "profile-suite")]
    ProfileSuite(Common),
    /// Perturbation and approximate-solution stability.
    Stability(Common),
    /// Super-threshold focusing run.
    #[command(name = "blowup_probe", alias = "blowup-probe")]
    BlowupProbe(Common),
}

#[derive(Debug, Subcommand)]
enum ProfileVerb {
    /// Write one rescaled profile on the torus.
    Make(Common),
    /// Extinction curves as CSV.
    Extinction(Common),
    /// Kernel sup estimates as JSON.
    Kernel(Common),
    /// Greedy bubble extraction.
    Extract(Common),
}

impl Command {
    fn split(self) -> (Scenario, Common) {
        match self {
            Command::Evolve(c) => (Scenario::Evolve, c),
            Command::GroundState(c) => (Scenario::GroundState, c),
            Command::Norms(c) => (Scenario::Norms, c),
            Command::Profiles { verb } => match verb {
                ProfileVerb::Make(c) => (Scenario::ProfilesMake, c),
                ProfileVerb::Extinction(c) => (Scenario::Extinction, c),
                ProfileVerb::Kernel(c) => (Scenario::Kernel, c),
                ProfileVerb::Extract(c) => (Scenario::ProfilesExtract, c),
            },
            Command::Trapping(c) => (Scenario::Trapping, c),
            Command::Strichartz(c) => (Scenario::Strichartz, c),
            Command::Bilinear(c) => (Scenario::Bilinear, c),
            Command::Extinction(c) => (Scenario::Extinction, c),
            Command::ProfileSuite(c) => (Scenario::ProfileSuite, c),
            Command::Stability(c) => (Scenario::Stability, c),
            Command::BlowupProbe(c) => (Scenario::BlowupProbe, c),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn set_threads(n: Option<usize>) -> Result<(), String> {
    let Some(n) = n else {
        return Ok(());
    };
    if n == 0 {
        return Err("--threads must be at least 1".into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, common) = cli.command.split();
    if let Err(e) = set_threads(common.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let mut cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run_to_dir(scenario, &cfg, &common.out) {
        Ok(report) => {
            for c in &report.checks {
                let verdict = if c.passed { "pass" } else { "FAIL" };
                println!("{verdict} {}: {}", c.name, c.detail);
            }
            println!(
                "report written to {}",
                common.out.join("report.json").display()
            );
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
