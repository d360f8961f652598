use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fusefl::cli::{cmd_partition, cmd_probe, cmd_report, cmd_run};

#[derive(Parser)]
#[command(
    name = "fusefl",
    version,
    about = "Desk-scale one-shot federated learning simulator with progressive block fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an IDX dataset across clients with Dirichlet sampling
    Partition {
        /// Directory holding <prefix>-images-idx3-ubyte / <prefix>-labels-idx1-ubyte
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Explicit image file (overrides --dataset)
        #[arg(long)]
        images: Option<PathBuf>,
        /// Explicit label file (overrides --dataset)
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Filename prefix inside --dataset
        #[arg(long, default_value = "train")]
        prefix: String,
        #[arg(long)]
        clients: usize,
        /// Dirichlet concentration; lower is more non-IID
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resample until every client has at least this many samples
        #[arg(long, default_value_t = 1)]
        min_per_client: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a federated run described by a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated learning rates; runs each into a subdirectory
        #[arg(long)]
        lr_grid: Option<String>,
    },
    /// Measure per-stage representations of a checkpointed model
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config describing the dataset and probe settings
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate run summaries, or print closed-form cost tables
    Report {
        /// summary.json files to tabulate
        summaries: Vec<PathBuf>,
        /// Print the communication/storage cost table instead
        #[arg(long)]
        cost_table: bool,
        /// Serialized model size in bytes (for --cost-table)
        #[arg(long)]
        model_bytes: Option<u64>,
        /// FedAvg rounds (for --cost-table)
        #[arg(long, default_value_t = 10)]
        rounds: u64,
        /// Client counts (for --cost-table)
        #[arg(long, default_value = "5,10,20,50")]
        clients: String,
    },
}

fn dispatch(cli: Cli) -> fusefl::Result<()> {
    match cli.command {
        Command::Partition {
            dataset,
            images,
            labels,
            prefix,
            clients,
            alpha,
            seed,
            min_per_client,
            out,
        } => cmd_partition(
            dataset.as_deref(),
            images.as_deref(),
            labels.as_deref(),
            &prefix,
            clients,
            alpha,
            seed,
            min_per_client,
            &out,
        ),
        Command::Run { config, lr_grid } => cmd_run(&config, lr_grid.as_deref()),
        Command::Probe {
            checkpoint,
            config,
            out,
        } => cmd_probe(&checkpoint, &config, &out),
        Command::Report {
            summaries,
            cost_table,
            model_bytes,
            rounds,
            clients,
        } => cmd_report(&summaries, cost_table, model_bytes, rounds, &clients),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
