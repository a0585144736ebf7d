use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rootpipe::config::{ExperimentConfig, Mode};
use rootpipe::pipeline;
use rootpipe::synth;

#[derive(Parser)]
#[command(name = "rootpipe", about = "Root phenotyping analysis from label-mask sequences")]
struct Cli {
    /// Experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads (also ROOTPIPE_THREADS); defaults to all cores
    #[arg(long)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Standard,
    Screening,
    Eval,
    Fpca,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Standard => Mode::Standard,
            ModeArg::Screening => Mode::Screening,
            ModeArg::Eval => Mode::Eval,
            ModeArg::Fpca => Mode::Fpca,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled sequence for pipeline testing
    Generate {
        /// "standard" (2 growing plants) or "screening" (seed field)
        #[arg(long, default_value = "standard")]
        kind: String,
        /// Output directory for PGM frames + manifest.json
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Seed count (screening kind only)
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        rng_seed: Option<u64>,
    },
}

fn generate(
    kind: &str,
    dir: &PathBuf,
    frames: Option<usize>,
    seeds: Option<usize>,
    rng_seed: Option<u64>,
) -> rootpipe::Result<()> {
    match kind {
        "standard" => {
            let mut params = synth::StandardParams::default();
            if let Some(f) = frames {
                params.n_frames = f;
            }
            if let Some(s) = rng_seed {
                params.rng_seed = s;
            }
            let (seq, rois) = synth::generate_standard(&params);
            let manifest = synth::write_sequence(dir, &seq)?;
            let rois_path = dir.join("rois.json");
            std::fs::write(&rois_path, serde_json::to_string_pretty(&rois).unwrap()).map_err(
                |source| rootpipe::PipelineError::Io {
                    path: rois_path.clone(),
                    source,
                },
            )?;
            println!("wrote {}", manifest.display());
            println!("wrote {}", rois_path.display());
        }
        "screening" => {
            let mut params = synth::ScreeningParams::default();
            if let Some(f) = frames {
                params.n_frames = f;
            }
            if let Some(s) = seeds {
                params.n_seeds = s;
            }
            if let Some(s) = rng_seed {
                params.rng_seed = s;
            }
            let seq = synth::generate_screening(&params);
            let manifest = synth::write_sequence(dir, &seq)?;
            println!("wrote {}", manifest.display());
        }
        other => {
            return Err(rootpipe::PipelineError::Config(format!(
                "unknown generate kind {other:?} (expected standard|screening)"
            )))
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| {
        std::env::var("ROOTPIPE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool: {e}");
        }
    }

    if let Some(Command::Generate {
        kind,
        dir,
        frames,
        seeds,
        rng_seed,
    }) = &cli.command
    {
        return match generate(kind, dir, *frames, *seeds, *rng_seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }

    let Some(config_path) = &cli.config else {
        eprintln!("error: --config is required (or use the generate subcommand)");
        return ExitCode::FAILURE;
    };
    let mut config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(m) = cli.mode {
        config.mode = m.into();
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }

    match pipeline::run(&config) {
        Ok(summary) => {
            println!("bundle written to {}", summary.out_dir.display());
            if !summary.warnings.is_empty() {
                println!("warnings:");
                for w in &summary.warnings {
                    println!("  {w}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
