//! Train the adversarial reconstructor on flow patches of synthetic live
//! videos and compare reconstruction error on held-out live and hand-held
//! spoof videos. Prints the loss curve and saves a checkpoint.
//!
//! ```text
//! cargo run --release --example train_generator -- --epochs 8 --checkpoint gen.safetensors
//! ```

use clap::Parser;
use std::path::PathBuf;

use livegan::bench::{generate_synthetic_video, MotionModel, SyntheticVideoSpec};
use livegan::flowprep::{video_maps, video_patches, PatchBatch, PrepSettings};
use livegan::gan::{save_checkpoint, train, Checkpoint, TrainingConfig};
use livegan::scoring::{frame_scores, ScoreMode};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 8)]
    videos: u64,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn patches(model: MotionModel, seeds: std::ops::Range<u64>, prep: &PrepSettings) -> livegan::Result<PatchBatch> {
    let batches = seeds
        .map(|s| {
            let (video, _) = generate_synthetic_video(&SyntheticVideoSpec::new(model, s))?;
            video_patches(&video_maps(&video, prep)?, prep.window, prep.stride)
        })
        .collect::<livegan::Result<Vec<_>>>()?;
    PatchBatch::concat(&batches)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn main() -> livegan::Result<()> {
    let args = Args::parse();
    let prep = PrepSettings::default();
    let live = patches(MotionModel::Live, 0..args.videos, &prep)?;
    let cfg = TrainingConfig {
        epochs: args.epochs,
        ..TrainingConfig::desk()
    };
    println!("training on {} live patches", live.len());
    let (g, d, history) = train(&live, &cfg)?;
    for (e, l) in history.recon_loss.iter().enumerate() {
        println!(
            "epoch {:>2}  recon {l:.4}  D {:.4}",
            e + 1,
            history.d_loss[e].unwrap_or(f64::NAN)
        );
    }

    let held_out = 1000..1000 + args.videos.min(4);
    let live_test = frame_scores(
        &g,
        &patches(MotionModel::Live, held_out.clone(), &prep)?,
        ScoreMode::Pixel,
    )?;
    let hand_test = frame_scores(&g, &patches(MotionModel::SpoofHand, held_out, &prep)?, ScoreMode::Pixel)?;
    println!(
        "mean patch error: live {:.4}, hand-held spoof {:.4}",
        mean(&live_test),
        mean(&hand_test)
    );

    if let Some(path) = args.checkpoint {
        save_checkpoint(
            &Checkpoint {
                generator: g,
                discriminator: d,
                epoch: cfg.epochs,
                loss_weights: cfg.loss_weights,
            },
            &path,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
