//! `ocvad`: command-line front end for the anomaly-detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocvad_core::config::RunConfig;
use ocvad_core::{pipeline, Error};

#[derive(Debug, Parser)]
#[command(name = "ocvad", version, about = "Object-centric adversarial video anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory: the dataset root for `synth`, the run directory otherwise.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite a non-empty dataset directory (`synth`).
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the synthetic moving-sprites dataset.
    Synth,
    /// Train the cross-domain GAN on the training split.
    TrainGardin,
    /// Train the reconstruction-error classifier on training-split PMSRE vectors.
    TrainAlrec,
    /// Score every test video.
    Score,
    /// Frame-level AUC of the test scores.
    Eval,
    /// Loss-subset and distance-combination ablation tables.
    Ablate,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        match cli.command {
            Command::Synth => cfg.dataset = out.clone(),
            _ => cfg.out = out.clone(),
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Synth => {
            let log = pipeline::synth(&cfg, cli.force)?;
            let anomalies = log.events.iter().filter(|e| e.anomaly.is_some()).count();
            println!(
                "dataset {}: {} train videos x {} frames, {} test videos x {} frames, {} sprites, {} anomaly events",
                cfg.dataset.display(),
                cfg.synth.train_videos,
                cfg.synth.train_frames,
                cfg.synth.test_videos,
                cfg.synth.test_frames,
                log.events.len(),
                anomalies
            );
        }
        Command::TrainGardin => {
            let (_, report) = pipeline::train_gardin(&cfg)?;
            let last = report.epochs.last().expect("at least one epoch");
            println!(
                "gardin: {} epochs, probe L_GAC {:.5} -> {:.5}, checkpoint {}",
                report.epochs.len(),
                report.initial_probe_gac,
                last.probe_gac,
                cfg.out.join(pipeline::GARDIN_CHECKPOINT).display()
            );
        }
        Command::TrainAlrec => {
            let (_, report) = pipeline::train_alrec(&cfg)?;
            let last = report.epochs.last().expect("at least one epoch");
            println!(
                "alrec: {} epochs, D(real) {:.4}, D(fake) {:.4}, checkpoint {}",
                report.epochs.len(),
                last.d_real,
                last.d_fake,
                cfg.out.join(pipeline::ALREC_CHECKPOINT).display()
            );
        }
        Command::Score => {
            let out = pipeline::score(&cfg)?;
            let frames: usize = out.raw.iter().map(|s| s.len()).sum();
            println!(
                "scored {} videos, {} frames -> {}",
                out.raw.len(),
                frames,
                cfg.out.join(pipeline::SCORES).display()
            );
        }
        Command::Eval => println!("{}", pipeline::eval(&cfg)?.to_json_line()),
        Command::Ablate => print!("{}", pipeline::ablate(&cfg)?.to_markdown()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
