use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dynbeam::harness::{self, ExperimentConfig, OutputFormat, RunOptions};

#[derive(Parser)]
#[command(name = "dynbeam", version, about = "Monte-Carlo benchmark harness for hybrid beamformer designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write aggregated results.
    Run {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output path for the aggregated results.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Worker thread count (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write per-iteration design traces next to the results
        /// (<out>.trace.jsonl).
        #[arg(long)]
        trace: bool,
        /// Write replayable per-trial channel records to this path.
        #[arg(long)]
        dump_channels: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            threads,
            trace,
            dump_channels,
        } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()?;
            }
            let cfg = ExperimentConfig::load(&config)?;
            let artifacts = harness::run_full(
                &cfg,
                RunOptions {
                    collect_traces: trace,
                    dump_channels: dump_channels.is_some(),
                },
            )?;
            harness::emit_results(&artifacts.rows, &cfg, &out, format.into())?;
            if trace {
                let trace_path = out.with_extension("trace.jsonl");
                harness::emit_jsonl(&artifacts.traces, &trace_path)?;
            }
            if let Some(path) = dump_channels {
                harness::emit_jsonl(&artifacts.channel_dumps, &path)?;
            }
            Ok(())
        }
    }
}
