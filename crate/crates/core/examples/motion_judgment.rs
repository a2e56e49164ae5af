//! Motion judgment on flow maps: a printed photo held still produces nearly
//! identical maps, so the mean difference between adjacent maps stays below
//! epsilon. Sweeps epsilon over synthetic live and fixed-spoof videos.
//!
//! ```text
//! cargo run --release --example motion_judgment
//! ```

use livegan::bench::{generate_synthetic_video, MotionModel, SyntheticVideoSpec};
use livegan::flowprep::{video_maps, PrepSettings};
use livegan::scoring::{mean_pair_difference, MotionSettings};

fn main() -> livegan::Result<()> {
    let prep = PrepSettings::default();
    let n_pairs = MotionSettings::default().n_pairs;
    let mut rows = Vec::new();
    for model in [MotionModel::Live, MotionModel::SpoofFixed] {
        for seed in 0..4 {
            let (video, _) = generate_synthetic_video(&SyntheticVideoSpec::new(model, seed))?;
            let diff = mean_pair_difference(&video_maps(&video, &prep)?, n_pairs, seed)?;
            rows.push((model, seed, diff));
        }
    }
    for (model, seed, diff) in &rows {
        println!("{:<12} seed {seed}: {diff:.3}", model.to_string());
    }
    println!("\nepsilon  live passing  fixed rejected");
    for eps in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let count = |m: MotionModel, moving: bool| rows.iter().filter(|r| r.0 == m && (r.2 > eps) == moving).count();
        println!(
            "{eps:>7}  {:>12}  {:>14}",
            count(MotionModel::Live, true),
            count(MotionModel::SpoofFixed, false)
        );
    }
    Ok(())
}
