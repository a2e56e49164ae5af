use serde::{Deserialize, Serialize};
use std::path::Path;

use super::frame::ScoreMode;
use super::mmd::KernelSpec;
use super::{count_labels, Label, LabeledScore};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Decision threshold with the development-set error rates it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub dev_far: f64,
    pub dev_frr: f64,
    pub dev_hter: f64,
}

/// Everything `score` needs besides the generator and the reference scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(flatten)]
    pub result: CalibrationResult,
    #[serde(default)]
    pub score_mode: ScoreMode,
    pub kernel: KernelSpec,
}

impl CalibrationFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: Self = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        file.kernel.validate()?;
        Ok(file)
    }
}

/// Spoof iff `score > threshold`.
pub fn classify_video(score: f64, cal: &CalibrationResult) -> Result<Label> {
    if !score.is_finite() {
        return Err(Error::Numeric(format!("video score {score} is not finite")));
    }
    Ok(if score > cal.threshold {
        Label::Spoof
    } else {
        Label::Live
    })
}

pub(crate) fn check_scores(scores: &[LabeledScore]) -> Result<(usize, usize)> {
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Numeric(format!("score {} is not finite", s.score)));
    }
    let (n_live, n_spoof) = count_labels(scores);
    if n_live == 0 || n_spoof == 0 {
        return Err(Error::Data(format!(
            "need both labels, got {n_live} live and {n_spoof} spoof"
        )));
    }
    Ok((n_live, n_spoof))
}

pub(crate) fn error_rates(scores: &[LabeledScore], threshold: f64) -> (f64, f64) {
    let (n_live, n_spoof) = count_labels(scores);
    let false_accept = scores
        .iter()
        .filter(|s| s.label == Label::Spoof && s.score <= threshold)
        .count();
    let false_reject = scores
        .iter()
        .filter(|s| s.label == Label::Live && s.score > threshold)
        .count();
    (
        false_accept as f64 / n_spoof as f64,
        false_reject as f64 / n_live as f64,
    )
}

/// Threshold minimizing development HTER over `-inf`, the midpoints between
/// adjacent distinct sorted scores, and `+inf`; ties go to the smallest
/// threshold.
pub fn calibrate_threshold(dev_scores: &[LabeledScore]) -> Result<CalibrationResult> {
    let (n_live, n_spoof) = check_scores(dev_scores)?;
    let mut sorted = dev_scores.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));

    // HTER is proportional to false_accept * n_live + false_reject * n_spoof,
    // which is compared exactly in integers.
    let cost = |fa: usize, fr: usize| (fa * n_live + fr * n_spoof) as u128;
    let (mut fa, mut fr) = (0usize, n_live);
    let mut best = (cost(fa, fr), f64::NEG_INFINITY);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].score;
        while i < sorted.len() && sorted[i].score == value {
            match sorted[i].label {
                Label::Live => fr -= 1,
                Label::Spoof => fa += 1,
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(next) => value + (next.score - value) / 2.0,
            None => f64::INFINITY,
        };
        let c = cost(fa, fr);
        if c < best.0 {
            best = (c, threshold);
        }
    }

    let threshold = best.1;
    let (dev_far, dev_frr) = error_rates(dev_scores, threshold);
    Ok(CalibrationResult {
        threshold,
        dev_far,
        dev_frr,
        dev_hter: (dev_far + dev_frr) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(live: &[f64], spoof: &[f64]) -> Vec<LabeledScore> {
        live.iter()
            .map(|&s| LabeledScore::new(s, Label::Live))
            .chain(spoof.iter().map(|&s| LabeledScore::new(s, Label::Spoof)))
            .collect()
    }

    #[test]
    fn decision_rule() {
        let cal = CalibrationResult {
            threshold: 0.5,
            dev_far: 0.0,
            dev_frr: 0.0,
            dev_hter: 0.0,
        };
        assert_eq!(classify_video(0.9, &cal).unwrap(), Label::Spoof);
        assert_eq!(classify_video(0.5, &cal).unwrap(), Label::Live);
        assert_eq!(classify_video(0.1, &cal).unwrap(), Label::Live);
        assert!(matches!(classify_video(f64::NAN, &cal), Err(Error::Numeric(_))));
    }

    #[test]
    fn separable_dev_set() {
        let cal = calibrate_threshold(&labeled(&[0.1, 0.2], &[0.8, 0.9])).unwrap();
        assert!((cal.threshold - 0.5).abs() < 1e-15);
        assert_eq!(cal.dev_hter, 0.0);
    }

    #[test]
    fn identical_scores_cannot_separate() {
        let cal = calibrate_threshold(&labeled(&[0.3, 0.3], &[0.3])).unwrap();
        assert_eq!(cal.dev_hter, 0.5);
        assert_eq!(cal.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn single_label_is_data_error() {
        assert!(matches!(
            calibrate_threshold(&labeled(&[0.1], &[])),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            calibrate_threshold(&labeled(&[0.1], &[f64::INFINITY])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn calibration_file_round_trip_with_infinite_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.toml");
        for threshold in [0.25, f64::NEG_INFINITY, f64::INFINITY] {
            let file = CalibrationFile {
                result: CalibrationResult {
                    threshold,
                    dev_far: 0.5,
                    dev_frr: 0.0,
                    dev_hter: 0.25,
                },
                score_mode: ScoreMode::Pixel,
                kernel: KernelSpec::rbf(vec![0.1, 0.2]),
            };
            file.save(&path).unwrap();
            assert_eq!(CalibrationFile::load(&path).unwrap(), file);
        }
    }
}
