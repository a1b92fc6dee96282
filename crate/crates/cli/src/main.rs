use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mhtk_cli::{cmd_compose, cmd_eval, cmd_flow, cmd_inspect, cmd_synth, format_metric, CliError, PipelineConfig};
use mhtk_core::eval::AlignMode;

#[derive(Parser, Debug)]
#[command(name = "mhtk", version, about = "Synthetic occlusion clips, optical flow and PA-MPJPE evaluation")]
struct Cli {
    /// JSON pipeline configuration; flags and environment override it.
    #[arg(long, global = true, env = "MHTK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MHTK_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "MHTK_CLIP_LENGTH")]
    clip_length: Option<usize>,
    /// static-background, no-camera-tracking, no-occluders, no-total-occlusions
    #[arg(long, global = true, env = "MHTK_ABLATION", value_delimiter = ',')]
    ablation: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "MHTK_JOBS")]
    jobs: Option<usize>,
    #[arg(long, global = true, env = "MHTK_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build one clip directory per manifest line.
    Compose { manifest: PathBuf },
    /// Dense TV-L1 flow for every consecutive pair of a frame directory.
    Flow { frames: PathBuf },
    /// PA-MPJPE of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Rotation and translation only.
        #[arg(long)]
        rigid: bool,
    },
    /// Occlusion statistics over composed clips.
    Inspect {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic person/background corpus and its manifest.
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 60)]
        background_frames: usize,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(len) = cli.clip_length {
        config.clip_length = len;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        config.output_root = Some(out.clone());
    }
    for name in &cli.ablation {
        config.compose.ablations.enable(name).map_err(CliError::Usage)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Compose { manifest } => {
            let outcome = cmd_compose(&config, manifest)?;
            eprintln!(
                "{} clips written, {} failed ({})",
                outcome.written.len(),
                outcome.failures.len(),
                config.output_root().display()
            );
            Ok(ExitCode::from(outcome.exit_code() as u8))
        }
        Command::Flow { frames } => {
            let written = cmd_flow(frames, &config.output_root(), &config.compose.background_flow, config.jobs)?;
            eprintln!("{} flow fields written", written.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { pred, gt, rigid } => {
            let mode = if *rigid { AlignMode::Rigid } else { AlignMode::Similarity };
            let report = cmd_eval(pred, gt, &config.output_root(), mode)?;
            print!("{}", report.to_table());
            println!("{}", format_metric(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::Inspect { dir, json } => {
            let stats = cmd_inspect(dir)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                print!("{}", stats.render());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { count, background_frames } => {
            let manifest = cmd_synth(&config.output_root(), *count, &config, *background_frames)?;
            println!("{}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
