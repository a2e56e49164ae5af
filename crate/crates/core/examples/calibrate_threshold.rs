//! Fit the HTER-minimizing threshold on overlapping development scores, then
//! evaluate FAR, FRR, HTER and AUC on a fresh test draw.
//!
//! ```text
//! cargo run --example calibrate_threshold
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use livegan::scoring::{calibrate_threshold, compute_metrics, Label, LabeledScore};

fn scores(seed: u64, n_live: usize, n_spoof: usize) -> Vec<LabeledScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live = Normal::new(1.0, 0.4).unwrap();
    let spoof = Normal::new(2.2, 0.6).unwrap();
    let mut out: Vec<LabeledScore> = (0..n_live)
        .map(|_| LabeledScore::new(live.sample(&mut rng), Label::Live))
        .collect();
    out.extend((0..n_spoof).map(|_| LabeledScore::new(spoof.sample(&mut rng), Label::Spoof)));
    out
}

fn main() -> livegan::Result<()> {
    let dev = scores(0, 60, 90);
    let cal = calibrate_threshold(&dev)?;
    println!(
        "threshold {:.4}: dev FAR {:.3} FRR {:.3} HTER {:.3}",
        cal.threshold, cal.dev_far, cal.dev_frr, cal.dev_hter
    );
    let test = scores(1, 200, 200);
    let m = compute_metrics(&test, cal.threshold)?;
    println!(
        "test ({} live, {} spoof): FAR {:.3} FRR {:.3} HTER {:.3} AUC {:.4}",
        m.n_live, m.n_spoof, m.far, m.frr, m.hter, m.auc
    );
    Ok(())
}
