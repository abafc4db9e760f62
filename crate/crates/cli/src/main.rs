//! `amdyn`: experiment harness for associative-memory training dynamics.

mod commands;
mod config;
mod error;
mod figures;
mod output;
mod svg;

use clap::{Parser, Subcommand};
use commands::Context;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "amdyn", version, about = "Associative-memory training dynamics")]
struct Cli {
    /// Override the experiment seed (defaults to the config's seed, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory (overrides the config and AMDYN_OUTPUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured dynamics and record the trajectory.
    Simulate { config: PathBuf },
    /// Rasterize the loss landscape over the gamma plane.
    Landscape { config: PathBuf },
    /// Compute a steps-to-accuracy phase diagram.
    Phase { config: PathBuf },
    /// Tabulate closed-form margin curves (and gamma flow, if configured).
    #[command(name = "closed-form")]
    ClosedForm { config: PathBuf },
    /// Re-render a built-in figure with its self-checks.
    Reproduce {
        /// Figure id (fig1..fig6), or "list" to enumerate them.
        figure: String,
    },
    /// Run the property suite and report per-property timings.
    Verify {
        /// Tighter tolerances and larger sample counts.
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Context {
        seed_flag: cli.seed,
        output_flag: cli.output_dir.clone(),
    };
    let result = match &cli.command {
        Command::Simulate { config } => commands::simulate(&ctx, config),
        Command::Landscape { config } => commands::landscape(&ctx, config),
        Command::Phase { config } => commands::phase(&ctx, config),
        Command::ClosedForm { config } => commands::closed_form_cmd(&ctx, config),
        Command::Reproduce { figure } if figure == "list" => {
            for f in figures::registry() {
                println!("{:<6} scale {:<5} {}", f.id, f.scale_factor, f.description);
            }
            Ok(())
        }
        Command::Reproduce { figure } => {
            let root = output::resolve_output_dir(cli.output_dir.as_deref(), None);
            figures::run(figure, &root, cli.seed.unwrap_or(1))
        }
        Command::Verify { strict } => commands::verify_cmd(&ctx, *strict),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
