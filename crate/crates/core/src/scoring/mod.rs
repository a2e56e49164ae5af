//! From a trained generator to a per-video spoof decision.
//!
//! Frames are scored by reconstruction error, a video's frame scores form a
//! distribution that is compared to the live reference distribution with a
//! kernel maximum mean discrepancy, and the resulting video score is
//! thresholded. Threshold calibration, FAR/FRR/HTER/AUC metrics and the
//! no-motion pre-filter also live here.

mod calibrate;
mod frame;
mod metrics;
mod mmd;
mod motion;

pub use calibrate::{calibrate_threshold, classify_video, CalibrationFile, CalibrationResult};
pub use frame::{frame_score, frame_scores, map_distribution, video_distribution, ScoreMode};
pub use metrics::{auc, compute_metrics, MetricsReport};
pub use mmd::{
    median_pairwise_distance, mmd, KernelFamily, KernelSpec, MmdReference, ScoreDistribution, SourceTag,
    DEFAULT_BANDWIDTH_FACTORS,
};
pub use motion::{mean_pair_difference, motion_judgment, MotionSettings};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Spoof,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Live => "live",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "live" | "real" => Ok(Label::Live),
            "spoof" | "attack" => Ok(Label::Spoof),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// A video-level (or image-level) score with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub label: Label,
}

impl LabeledScore {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }
}

pub(crate) fn count_labels(scores: &[LabeledScore]) -> (usize, usize) {
    let live = scores.iter().filter(|s| s.label == Label::Live).count();
    (live, scores.len() - live)
}
