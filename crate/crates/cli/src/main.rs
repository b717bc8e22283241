use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cil_core::bank::{manifest_path, read_manifest};
use cil_core::synth::generate_to_dir;
use cil_core::{load_bank, parse_config, run, Error, RunOptions, SynthSpec};

/// Class-incremental evaluation over precomputed embedding banks.
#[derive(Parser)]
#[command(name = "cil-engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic train/test bank pair.
    Synth {
        /// JSON synthetic bank spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a bank and print a summary.
    Inspect {
        #[arg(long)]
        bank: PathBuf,
    },
}

fn run_command(config: &Path) -> Result<(), Error> {
    let config = parse_config(config)?;
    let options = RunOptions::from_env()?;
    match run(&config, &options) {
        Ok(result) => {
            let metrics = result
                .metrics
                .as_ref()
                .expect("completed runs have metrics");
            println!("stages:      {}", result.num_stages);
            println!("last_acc:    {:.2}", 100.0 * metrics.last_acc);
            println!("avg_acc:     {:.2}", 100.0 * metrics.avg_acc);
            match metrics.forgetting {
                Some(f) => println!("forgetting:  {:.2}", 100.0 * f),
                None => println!("forgetting:  undefined (single stage)"),
            }
            println!("results in {}", config.output_dir.display());
            Ok(())
        }
        Err(failure) => {
            if failure.partial.is_some() {
                log::warn!("partial results written to {}", config.output_dir.display());
            }
            Err(failure.error)
        }
    }
}

fn synth_command(spec: &Path, out: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::Io {
        path: spec.display().to_string(),
        source: e,
    })?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("synthetic spec {}: {e}", spec.display())))?;
    let (train, test) = generate_to_dir(&spec, out)?;
    println!("{}", train.display());
    println!("{}", test.display());
    Ok(())
}

fn inspect_command(path: &Path) -> Result<(), Error> {
    let bank = load_bank(path)?;
    let counts = bank.class_counts();
    println!("file:        {}", path.display());
    println!("split:       {:?}", bank.split());
    println!("dim:         {}", bank.dim());
    println!("samples:     {}", bank.len());
    println!("classes:     {}", bank.num_classes());
    println!(
        "per class:   min {} / max {}",
        counts.iter().min().expect("at least one class"),
        counts.iter().max().expect("at least one class")
    );
    println!(
        "text:        {}",
        if bank.text_embeddings().is_some() {
            "yes"
        } else {
            "no"
        }
    );
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        let manifest = read_manifest(&sidecar)?;
        manifest.check(&bank)?;
        println!("dataset:     {}", manifest.dataset);
        println!("backbone:    {}", manifest.backbone_type);
    } else {
        println!("manifest:    none");
    }
    println!("valid");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run { config } => run_command(config),
        Command::Synth { spec, out } => synth_command(spec, out),
        Command::Inspect { bank } => inspect_command(bank),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
