//! `penet`: corpus generation, training, sampling, evaluation and figure
//! sheets for the signer synthesis pipeline. Every output is a file.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "penet", version, about = "Pose-conditioned signer synthesis: data, training, sampling and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random draw; falls back to PENET_SEED, then 0.
    #[arg(long, global = true, env = "PENET_SEED")]
    pub seed: Option<u64>,

    /// Print failures to stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,

    /// Omit wall-clock fields from outputs so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic signer corpus.
    GenData(commands::GenData),
    /// Train from a config file, optionally resuming a checkpoint.
    Train(commands::Train),
    /// Draw prior samples for every pose of a corpus.
    Sample(commands::Sample),
    /// Masked region metrics and pose-estimator agreement.
    Evaluate(commands::Evaluate),
    /// Train and score the ablation rows.
    Ablate(commands::Ablate),
    /// Move a joint group and regenerate with the same latent.
    PoseEdit(commands::PoseEdit),
    /// Side-by-side sheet of several checkpoints on the same poses.
    Grid(commands::Grid),
}

fn report(json: bool, kind: &str, message: &str, code: u8) -> ExitCode {
    if json {
        let v = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
        eprintln!("{v}");
    } else {
        eprintln!("error: {message}");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    // the flag must work even when parsing itself fails
    let json = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if json => return report(true, "usage", e.to_string().trim(), 2),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let g = cli.global;
    let result = match cli.command {
        Command::GenData(c) => c.run(&g),
        Command::Train(c) => c.run(&g),
        Command::Sample(c) => c.run(&g),
        Command::Evaluate(c) => c.run(&g),
        Command::Ablate(c) => c.run(&g),
        Command::PoseEdit(c) => c.run(&g),
        Command::Grid(c) => c.run(&g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Outcome::Usage(m)) => report(g.json_errors, "usage", &m, 2),
        Err(Outcome::Runtime(e)) => report(g.json_errors, e.kind(), &e.to_string(), 1),
    }
}
