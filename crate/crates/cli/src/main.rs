use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loopguard::config::{load_config, SEED_ENV};
use loopguard::synth::write_fixture;
use loopguard::{run, CliError, Stage};
use loopguard_core::synthetic::SeparationFixture;

#[derive(Parser)]
#[command(name = "loopguard", version, about = "Embedding-space anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the dataset, copy it into the run directory and split it.
    Ingest(StageArgs),
    /// Train the autoencoder on reconstruction error.
    Pretrain(StageArgs),
    /// Fit the hypersphere center and fine-tune the encoder.
    Finetune(StageArgs),
    /// Score every row and derive the percentile threshold.
    Score(StageArgs),
    /// Fit and score the Isolation Forest and PCA baselines.
    Baseline(StageArgs),
    /// Export projections, histograms, latent reports and box statistics.
    Report(StageArgs),
    /// Run every stage in order.
    All(StageArgs),
    /// Write a labelled synthetic dataset (EMB1 plus manifest).
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for run directories, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Destination `.emb1` file; the manifest is written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Fixture parameters (JSON); omitted keys keep their defaults.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn stage_run(stages: &[Stage], args: &StageArgs) -> Result<(), CliError> {
    let seed = std::env::var(SEED_ENV).ok();
    let config = load_config(&args.config, args.out.as_deref(), seed.as_deref())?;
    let dir = run(stages, &config)?;
    println!("{}", dir.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut fixture = match &args.fixture {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config("fixture", format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SeparationFixture>(&text).map_err(|e| CliError::config("fixture", e.to_string()))?
        }
        None => SeparationFixture::default(),
    };
    if let Some(seed) = args.seed {
        fixture.seed = seed;
    }
    let (data, _) = write_fixture(&args.out, &fixture)?;
    println!("{} ({} rows, width {})", args.out.display(), data.rows(), data.dim());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => stage_run(&[Stage::Ingest], a),
        Command::Pretrain(a) => stage_run(&[Stage::Pretrain], a),
        Command::Finetune(a) => stage_run(&[Stage::Finetune], a),
        Command::Score(a) => stage_run(&[Stage::Score], a),
        Command::Baseline(a) => stage_run(&[Stage::Baseline], a),
        Command::Report(a) => stage_run(&[Stage::Report], a),
        Command::All(a) => stage_run(&Stage::ALL, a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.report() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
