use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use livegan::config::RunConfig;
use livegan::pipeline::{self, CommandReport};
use livegan::scoring::ScoreMode;
use livegan::Result;

#[derive(Parser)]
#[command(name = "livegan", version, about = "Optical-flow GAN liveness detection")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; each command writes into its own subdirectory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Videos {
    /// Video files (.y4m, .gif), frame directories, directories of those, or
    /// path,label CSV lists.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct Model {
    /// Directory holding checkpoint.safetensors and reference.safetensors.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Turn videos into flow maps and patches.
    Preprocess {
        #[command(flatten)]
        videos: Videos,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Train the generator on live patches and build the live reference.
    Train {
        /// Patch files or directories searched for them.
        #[arg(required = true)]
        patches: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        score_mode: Option<ScoreMode>,
    },
    /// Fit the decision threshold on labeled development videos.
    Calibrate {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        videos: Videos,
        /// Turn off the motion pre-filter.
        #[arg(long)]
        no_motion: bool,
    },
    /// Score videos with a calibrated model.
    Score {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        calibration: PathBuf,
        #[command(flatten)]
        videos: Videos,
        #[arg(long)]
        no_motion: bool,
    },
    /// One-class image benchmark.
    Bench {
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated classes; all when omitted.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<u8>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn report(name: &str, r: &CommandReport) {
    eprintln!("{name}: {} processed, {} failed", r.processed, r.failures.len());
    for f in &r.failures {
        eprintln!("  {}: {}", f.id, f.error);
    }
    for p in &r.outputs {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    let r = match cli.command {
        Command::Preprocess { videos, window, stride } => {
            if let Some(w) = window {
                cfg.preprocess.window = w;
            }
            if let Some(s) = stride {
                cfg.preprocess.stride = s;
            }
            let list = pipeline::collect_videos(&videos.inputs)?;
            pipeline::cmd_preprocess(&cfg, &list)?
        }
        Command::Train {
            patches,
            epochs,
            lr,
            batch_size,
            score_mode,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.learning_rate = l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(m) = score_mode {
                cfg.score.mode = m;
            }
            pipeline::cmd_train(&cfg, &patches)?
        }
        Command::Calibrate {
            model,
            videos,
            no_motion,
        } => {
            cfg.score.motion.enabled &= !no_motion;
            let list = pipeline::collect_videos(&videos.inputs)?;
            pipeline::cmd_calibrate(&cfg, &model.model, &list)?
        }
        Command::Score {
            model,
            calibration,
            videos,
            no_motion,
        } => {
            cfg.score.motion.enabled &= !no_motion;
            let list = pipeline::collect_videos(&videos.inputs)?;
            let (r, rows) = pipeline::cmd_score(&cfg, &model.model, &calibration, &list)?;
            for row in &rows {
                println!("{}\t{}", row.id, row.label);
            }
            r
        }
        Command::Bench {
            dataset,
            classes,
            epochs,
        } => {
            if let Some(d) = dataset {
                cfg.bench.dataset = d;
            }
            if !classes.is_empty() {
                cfg.bench.classes = classes;
            }
            if let Some(e) = epochs {
                cfg.bench.train.epochs = e;
            }
            let b = pipeline::cmd_bench(&cfg)?;
            println!("{}", b.summary());
            return Ok(true);
        }
    };
    report("livegan", &r);
    Ok(r.ok())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
