use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lyapinit_cli::commands::{self, load_models};
use lyapinit_cli::{CliError, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "lyapinit",
    version,
    about = "Data-free initialization of neural interception policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Decrease rate of the Lyapunov condition.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Points per swept dimension of the verification grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Print the default configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labelled datasets for both axes.
    GenData,
    /// Train both policies on previously generated datasets.
    Train {
        /// Directory holding S_x.csv and S_y.csv; defaults to the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check the sign of D over the verification grid.
    Verify {
        /// Directory holding model_x.json and model_y.json; defaults to the output directory.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Simulate the closed loop from the configured initial states.
    Simulate {
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run every stage in order.
    Pipeline,
}

fn gate(failures: &[String]) -> Result<(), CliError> {
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gate(failures.join("; ")))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    if c.dump_config {
        print!("{}", PipelineConfig::default().to_toml());
        return Ok(());
    }
    let mut cfg = PipelineConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: c.seed,
        out: c.out.clone(),
        eta: c.eta,
        epochs: c.epochs,
        grid: c.grid,
    });
    cfg.validate()?;
    if c.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Validation(
            "no command given; try `lyapinit --help`".into(),
        ));
    };
    let start = Instant::now();
    let out_dir = cfg.out_dir.clone();
    match command {
        Command::GenData => {
            let g = commands::gen_data(&cfg)?;
            for r in &g.reports {
                print!("{}", r.to_text());
            }
            gate(&g.failures)?;
        }
        Command::Train { data } => {
            let t = commands::train_models(&cfg, data.as_deref().unwrap_or(&out_dir))?;
            for (m, r) in t.models.iter().zip(&t.reports) {
                let axis = m.axis().map_or("-", |a| a.as_str());
                println!(
                    "{axis}: epoch-0 mse {} -> final mse {}",
                    r.initial().train_mse,
                    r.final_loss()
                );
            }
        }
        Command::Verify { models } => {
            let models = load_models(models.as_deref().unwrap_or(&out_dir))?;
            let v = commands::verify_models(&cfg, &models)?;
            for s in &v.summaries {
                print!("{}", s.to_text());
            }
            gate(&v.failures)?;
        }
        Command::Simulate { models } => {
            let models = load_models(models.as_deref().unwrap_or(&out_dir))?;
            let s = commands::simulate_models(&cfg, &models)?;
            for b in &s.batches {
                let ok = b.converged().iter().filter(|c| **c).count();
                println!("{}: {ok}/{} runs converged", b.label, b.trajectories.len());
            }
        }
        Command::Pipeline => {
            let p = commands::pipeline(&cfg)?;
            print!("{}", p.summary);
            gate(&p.failures())?;
        }
    }
    eprintln!(
        "done in {:.1} s, artifacts in {}",
        start.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
