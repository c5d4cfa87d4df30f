use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use viamfg::experiments::{emit_plot_data, load_manifest, run, verify_manifest, ExperimentConfig};
use viamfg::Error;

#[derive(Parser)]
#[command(name = "viamfg", version, about = "Mean field game experiments on invariant domains")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "VIAMFG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML or JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Emit plot series for a finished study.
    Plot {
        /// Directory of a finished run.
        #[arg(long)]
        out: PathBuf,
        /// `nash-study` or `particle-study`; defaults to the run's kind.
        study: Option<String>,
    },
    /// Validate a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir =
                out.or_else(|| cfg.output.clone()).ok_or_else(|| Error::Usage("no output directory (use --out or `output`)".into()))?;
            let manifest = run(&cfg, &dir)?;
            for (k, v) in &manifest.summary {
                println!("{k} = {v}");
            }
            println!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
            Ok(match manifest.checks_passed {
                Some(false) => {
                    eprintln!("checks failed");
                    1
                }
                _ => 0,
            })
        }
        Command::Plot { out, study } => {
            let manifest = load_manifest(&out)?;
            verify_manifest(&out, &manifest)?;
            let which = study.unwrap_or_else(|| manifest.kind.id().to_string());
            for p in emit_plot_data(&out, &manifest, &which)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (grid, model) = cfg.validate()?;
            println!("ok: {} on {} nodes, model {} ({})", cfg.kind.id(), grid.len(), model.name, &model.hash()[..12]);
            Ok(0)
        }
    }
}
