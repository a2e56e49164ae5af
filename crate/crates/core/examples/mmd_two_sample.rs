//! Two-sample MMD between score distributions: same source, shifted mean,
//! and wider spread, under the linear kernel and the median-heuristic rbf
//! mixture.
//!
//! ```text
//! cargo run --example mmd_two_sample
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use livegan::scoring::{mmd, KernelSpec, MmdReference, ScoreDistribution, SourceTag};

fn draw(shape: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(shape, scale).expect("positive parameters");
    (0..n).map(|_| g.sample(&mut rng)).collect()
}

fn main() -> livegan::Result<()> {
    let reference = ScoreDistribution::new(draw(4.0, 0.05, 400, 1), SourceTag::Reference, "reference")?;
    let cases = [
        ("same source", draw(4.0, 0.05, 120, 2)),
        ("shifted mean", draw(6.0, 0.05, 120, 3)),
        ("wider spread", draw(1.0, 0.2, 120, 4)),
    ];

    let mut pooled = reference.samples.clone();
    cases.iter().for_each(|(_, s)| pooled.extend(s));
    let rbf = KernelSpec::median_heuristic(&pooled, 0);
    println!("rbf kernel: {rbf:?}");
    let rbf_ref = MmdReference::new(reference.clone(), rbf)?;

    println!("{:<14} {:>12} {:>12}", "test set", "linear", "rbf mixture");
    for (name, samples) in cases {
        let test = ScoreDistribution::new(samples, SourceTag::Test, name)?;
        let lin = mmd(&reference, &test, &KernelSpec::linear())?;
        println!("{name:<14} {lin:>12.3e} {:>12.3e}", rbf_ref.score(&test)?);
    }
    Ok(())
}
