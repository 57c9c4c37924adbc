use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xwan_bench::commands::{self, Common, HeatmapArgs};
use xwan_bench::config::defaults_table;
use xwan_bench::CliError;

#[derive(Parser)]
#[command(name = "xwan", version, about = "Weak adversarial network solvers for parabolic PDEs")]
struct Cli {
    /// Override training.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Concurrent runs for compare and sweep.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the XNODE and DNN primal models with the same seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross product of parameter values, one run each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON document {"parameters": [{"name": "training.lr_primal", "values": [...]}, ...]}.
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a solution slice, from trained parameters or the exact solution.
    Heatmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// params.json written by train.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Slice time; defaults to the horizon.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        /// Two of t, x1, x2, ...; defaults to x1,x2 (t,x1 in one dimension).
        #[arg(long)]
        axes: Option<String>,
    },
    /// List problem presets and the config defaults table.
    Presets,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = Common {
        seed: cli.seed,
        force: cli.force,
        threads: cli.threads,
    };
    match cli.command {
        Command::Train { config, out } => {
            let s = commands::cmd_train(&config, &out, &common)?;
            println!(
                "{}: {} epochs, rel_err {}",
                s.model,
                s.epochs,
                s.rel_err.map_or("n/a".into(), |e| format!("{e:.4} ± {:.4}", s.rel_err_se.unwrap_or(0.0)))
            );
        }
        Command::Compare { config, out } => {
            for s in commands::cmd_compare(&config, &out, &common)? {
                println!("{}: {} epochs, N_eps {:?}", s.model, s.epochs, s.n_epsilon);
            }
        }
        Command::Sweep { config, sweep, out } => {
            let rows = commands::cmd_sweep(&config, &sweep, &out, &common)?;
            println!("{} runs written to {}", rows.len(), out.display());
        }
        Command::Heatmap {
            config,
            out,
            params,
            time,
            resolution,
            axes,
        } => {
            let args = HeatmapArgs {
                params,
                time,
                resolution,
                axes,
            };
            let g = commands::cmd_heatmap(&config, &out, &args, &common)?;
            let (v, x, y) = g.max_cell();
            println!("max {v} at ({x}, {y})");
        }
        Command::Presets => {
            print!("{}", commands::presets_listing());
            println!("\nconfig defaults:");
            for (key, value) in defaults_table() {
                println!("  {key:<30} {value}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
