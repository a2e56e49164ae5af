//! One-class MNIST: train on a single digit, score the test split by
//! reconstruction error, print the AUC per normal class.
//!
//! ```text
//! cargo run --release --example one_class_mnist -- --classes 0,1 --epochs 5
//! cargo run --release --example one_class_mnist -- --autoencoder
//! ```

use clap::Parser;
use livegan::bench::{data_dir, run_one_class_benchmark, BenchSettings, Dataset};
use livegan::gan::LossWeights;

#[derive(Parser)]
struct Args {
    /// Normal classes, comma separated (default: all ten).
    #[arg(long, value_delimiter = ',')]
    classes: Vec<u8>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Encoder and discriminator filters, comma separated.
    #[arg(long, value_delimiter = ',')]
    filters: Vec<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    max_train: Option<usize>,
    #[arg(long)]
    max_test: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train without the discriminator (w_a = 0).
    #[arg(long)]
    autoencoder: bool,
    #[arg(long)]
    w_i: Option<f64>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut settings = BenchSettings {
        classes: args.classes,
        max_train: args.max_train,
        max_test: args.max_test,
        seed: args.seed,
        ..BenchSettings::default()
    };
    let cfg = &mut settings.train;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if !args.filters.is_empty() {
        cfg.architecture.encoder_filters = args.filters.clone();
        cfg.architecture.discriminator_filters = args.filters.clone();
    }
    if let Some(l) = args.latent {
        cfg.architecture.latent_dim = l;
    }
    if let Some(w) = args.w_i {
        cfg.loss_weights.w_i = w;
    }
    if args.autoencoder {
        cfg.loss_weights = LossWeights::new(cfg.loss_weights.w_i, 0.0)?;
    }
    let dataset = Dataset::load("mnist", data_dir())?;
    let report = run_one_class_benchmark(&dataset, &settings)?;
    println!("{}", report.summary());
    Ok(())
}
