//! The one-class MNIST / CIFAR-10 protocol (train on one digit or object
//! class, score the whole test split, report AUC) and a synthetic live/spoof
//! video generator standing in for licensed face datasets.

mod datasets;
mod synthetic;

pub use datasets::{
    data_dir, load_cifar10, load_mnist, make_one_class_split, parse_cifar_batch, parse_idx_images, parse_idx_labels,
    Dataset, ImageSet, OneClassSplit, BENCH_INPUT_SIZE, DATA_DIR_ENV,
};
pub use synthetic::{generate_synthetic_video, MotionModel, SyntheticVideoSpec};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::flowprep::{PatchBatch, PatchOrigin};
use crate::gan::{train, TrainingConfig};
use crate::scoring::{auc, frame_scores, LabeledScore, ScoreMode};
use crate::util::{derive_seed, fingerprint, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub dataset: String,
    /// Normal classes to run; empty means every class in the dataset.
    pub classes: Vec<u8>,
    /// Cap on normal training images per class (seeded subsample).
    pub max_train: Option<usize>,
    /// Cap on test images per class run (seeded, label-stratified subsample).
    pub max_test: Option<usize>,
    pub score_mode: ScoreMode,
    pub seed: u64,
    /// Training settings for every class run; its seed is replaced by one
    /// derived from `seed`. Keys given in a config file override
    /// [`TrainingConfig::desk`], not the full-size defaults.
    #[serde(deserialize_with = "over_desk")]
    pub train: TrainingConfig,
}

fn over_desk<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<TrainingConfig, D::Error> {
    use serde::de::Error as _;
    use serde_json::Value;
    fn merge(base: &mut Value, patch: Value) {
        match (base, patch) {
            // Tagged enums (the optimizer) are replaced whole.
            (Value::Object(b), Value::Object(p)) if !p.contains_key("name") => {
                for (k, v) in p {
                    match b.get_mut(&k) {
                        Some(slot) => merge(slot, v),
                        None => {
                            b.insert(k, v);
                        }
                    }
                }
            }
            (slot, v) => *slot = v,
        }
    }
    let patch = Value::deserialize(de)?;
    let mut base = serde_json::to_value(TrainingConfig::desk()).map_err(D::Error::custom)?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            dataset: "mnist".into(),
            classes: Vec::new(),
            max_train: Some(3000),
            max_test: None,
            score_mode: ScoreMode::Pixel,
            seed: 0,
            train: TrainingConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub per_class: BTreeMap<u8, f64>,
    pub mean_auc: f64,
    pub runtime_secs: f64,
    pub fingerprint: String,
}

impl BenchReport {
    /// `class,auc` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,auc\n");
        for (c, a) in &self.per_class {
            let _ = writeln!(s, "{c},{a:.6}");
        }
        let _ = writeln!(s, "mean,{:.6}", self.mean_auc);
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn summary(&self) -> String {
        let classes: Vec<String> = self.per_class.iter().map(|(c, a)| format!("{c}:{a:.4}")).collect();
        format!(
            "{} one-class AUC  {}  mean {:.4}  ({:.0} s, config {})",
            self.dataset,
            classes.join(" "),
            self.mean_auc,
            self.runtime_secs,
            self.fingerprint
        )
    }
}

/// Train one model per normal class on that class's training images and
/// report the AUC of reconstruction-error scores on the test split (other
/// classes count as anomalies).
pub fn run_one_class_benchmark(dataset: &Dataset, settings: &BenchSettings) -> Result<BenchReport> {
    let cfg = &TrainingConfig {
        seed: derive_seed(settings.seed, "train"),
        ..settings.train.clone()
    };
    cfg.validate()?;
    if cfg.architecture.input_size != BENCH_INPUT_SIZE || cfg.architecture.input_channels != 3 {
        return Err(Error::Config(format!(
            "the benchmark feeds {s}x{s}x3 images; architecture expects {}x{}x{}",
            cfg.architecture.input_size,
            cfg.architecture.input_size,
            cfg.architecture.input_channels,
            s = BENCH_INPUT_SIZE
        )));
    }
    let start = Instant::now();
    let classes = if settings.classes.is_empty() {
        dataset.classes()
    } else {
        settings.classes.clone()
    };
    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let auc = one_class_auc(dataset, cfg, settings, class).map_err(|e| Error::InClass {
            class,
            source: Box::new(e),
        })?;
        log::info!("{} normal class {class}: AUC {auc:.4}", dataset.name);
        per_class.insert(class, auc);
    }
    let mean_auc = per_class.values().sum::<f64>() / per_class.len() as f64;
    let fp_source = serde_json::to_string(settings).map_err(|e| Error::Format(e.to_string()))?;
    Ok(BenchReport {
        dataset: dataset.name.clone(),
        per_class,
        mean_auc,
        runtime_secs: start.elapsed().as_secs_f64(),
        fingerprint: fingerprint(fp_source.as_bytes()),
    })
}

fn one_class_auc(dataset: &Dataset, cfg: &TrainingConfig, settings: &BenchSettings, class: u8) -> Result<f64> {
    let split = make_one_class_split(dataset, class, settings.seed, settings.max_train, settings.max_test)?;
    let train_images = dataset.train.to_model_input(&split.train)?;
    let provenance = split
        .train
        .iter()
        .map(|&i| PatchOrigin {
            frame_idx: i,
            row: 0,
            col: 0,
        })
        .collect();
    let batch = PatchBatch::new(train_images, provenance)?;
    let (g, _, _) = train(&batch, cfg)?;
    drop(batch);

    let test_images = dataset.test.to_model_input(&split.test)?;
    let provenance = split
        .test
        .iter()
        .map(|&i| PatchOrigin {
            frame_idx: i,
            row: 0,
            col: 0,
        })
        .collect();
    let scores = frame_scores(&g, &PatchBatch::new(test_images, provenance)?, settings.score_mode)?;
    let labeled: Vec<LabeledScore> = scores
        .into_iter()
        .zip(&split.test_labels)
        .map(|(s, &l)| LabeledScore::new(s, l))
        .collect();
    auc(&labeled)
}
