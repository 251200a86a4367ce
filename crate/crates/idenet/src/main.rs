use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idenet::commands::{cmd_evaluate, cmd_gen_data, cmd_reason, cmd_run_suite, cmd_train, Overrides};

/// Relational causal reasoning and direct effect estimation on networks.
#[derive(Parser)]
#[command(name = "ide-net", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file for the subcommand.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Answer a d-separation or identification query on a causal model.
    Reason(Common),
    /// Generate a network dataset with treatments and outcomes.
    GenData(Common),
    /// Train an estimator on a dataset directory.
    Train(Common),
    /// Score a trained model against a dataset's true effects.
    Evaluate(Common),
    /// Run an experiment grid.
    RunSuite(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (run, common): (fn(&std::path::Path, &Overrides) -> idenet::Result<_>, Common) = match cli.command {
        Command::Reason(c) => (cmd_reason, c),
        Command::GenData(c) => (cmd_gen_data, c),
        Command::Train(c) => (cmd_train, c),
        Command::Evaluate(c) => (cmd_evaluate, c),
        Command::RunSuite(c) => (cmd_run_suite, c),
    };
    let overrides = Overrides { out: common.out, seed: common.seed };
    match run(&common.config, &overrides) {
        Ok(outcome) => {
            let _ = std::io::stdout().write_all(outcome.stdout.as_bytes());
            ExitCode::from(outcome.exit)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
