use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shakegen_cli::{
    cmd_gradcheck, cmd_ring_demo, cmd_sample, cmd_validate, exit, Fault, GlobalOptions,
    HarnessError, RingDemo,
};

/// Constrained conformation sampling with a projected diffusion sampler.
#[derive(Debug, Parser)]
#[command(name = "shakegen", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Base seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration file.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Suppress progress and summary messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Worker threads for batch sampling (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a batch of conformations from a TOML experiment file.
    Sample {
        config: PathBuf,
        /// Also write timings.csv with per-sample wall times.
        #[arg(long)]
        timings: bool,
    },
    /// Check XYZ files against the constraints of an experiment file.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Compare analytic constraint gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Sample rings with bounded consecutive distances.
    RingDemo {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        batch: usize,
        #[arg(long, default_value_t = 250)]
        steps: usize,
        /// Use bounds that cannot all hold at once.
        #[arg(long)]
        infeasible: bool,
        #[arg(long)]
        timings: bool,
    },
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, HarnessError> {
    let mut opts = GlobalOptions {
        seed: cli.global.seed,
        out_dir: cli.global.out_dir,
        quiet: cli.global.quiet,
        threads: cli.global.threads.map(usize::from),
        timings: false,
    };
    match cli.command {
        Command::Sample { config, timings } => {
            opts.timings = timings;
            cmd_sample(&config, &opts, out)
        }
        Command::Validate { config, files } => cmd_validate(&files, &config, &opts, out),
        Command::Gradcheck { trials } => cmd_gradcheck(trials, &opts, Fault::None, out),
        Command::RingDemo {
            n,
            batch,
            steps,
            infeasible,
            timings,
        } => {
            opts.timings = timings;
            let demo = RingDemo {
                n,
                batch,
                steps,
                infeasible,
                ..RingDemo::default()
            };
            cmd_ring_demo(&demo, &opts, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE
            } else {
                exit::SUCCESS
            });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
