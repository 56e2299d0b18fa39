use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpers::commands::{self, Progress, RunPaths};
use mpers::trainer::LossRow;
use mpers::RunConfig;
use mpers_core::train::SampleGradient;

#[derive(Parser)]
#[command(name = "mpers", version, about = "Text-guided segmentation of synthetic remote-sensing scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Replace the configured run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and the manifest.
    GenData(Common),
    /// Caption every scene with the expert clients and write the transcript.
    Caption(Common),
    /// Train a model and write the checkpoint and loss log.
    Train(Common),
    /// Score the checkpoint and write metrics and guidance dumps.
    Eval(Common),
    /// Train and score the four-configuration ablation ladder.
    Ablate(Common),
    /// Measure median single-image inference time.
    Time(Common),
}

struct Console {
    every: u64,
}

impl Progress for Console {
    fn step(&mut self, label: &str, row: &LossRow, _grads: &[SampleGradient]) {
        if row.step == 1 || row.step.is_multiple_of(self.every) {
            eprintln!("[{label}] step {} lr {:.2e} loss {:.5}", row.step, row.lr, row.loss);
        }
    }

    fn note(&mut self, message: &str) {
        eprintln!("{message}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = match &cli.command {
        Command::GenData(c)
        | Command::Caption(c)
        | Command::Train(c)
        | Command::Eval(c)
        | Command::Ablate(c)
        | Command::Time(c) => c,
    };
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    let force = common.force;
    let paths = RunPaths::new(&config.run.out_dir);
    let mut console = Console { every: 50 };
    match cli.command {
        Command::GenData(_) => {
            let entries = commands::gen_data(&config, force)?;
            let train = entries.iter().filter(|e| e.split == mpers::config::Split::Train).count();
            println!(
                "wrote {} scenes ({train} train, {} eval) to {}",
                entries.len(),
                entries.len() - train,
                paths.data().display()
            );
        }
        Command::Caption(_) => {
            let s = commands::caption(&config, force)?;
            println!(
                "captioned {} scenes with {} experts, {} calls; acceptance rate {:.3}",
                s.scenes,
                s.experts,
                s.lines.len(),
                s.acceptance_rate()
            );
            println!("transcript: {}", paths.transcript().display());
        }
        Command::Train(_) => {
            let s = commands::train_command(&config, force, &mut console)?;
            println!(
                "trained {} steps, {} parameters, loss {:.5} -> {:.5}",
                s.steps, s.parameters, s.first_loss, s.final_loss
            );
            println!("checkpoint: {}", paths.checkpoint().display());
        }
        Command::Eval(_) => {
            let m = commands::eval_command(&config, force)?;
            print!("{}", mpers::report::metrics_table(&m));
            println!("metrics: {}", paths.metrics_json().display());
        }
        Command::Ablate(_) => {
            let a = commands::ablate_command(&config, force, &mut console)?;
            print!("{}", mpers::report::ablation_table(&a));
            println!("ablation: {}", paths.ablation_json().display());
        }
        Command::Time(_) => {
            let t = commands::time_command(&config, force)?;
            println!(
                "median inference time at {0}x{0}: {1:.2} ms over {2} runs",
                t.size, t.median_ms, t.runs
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
