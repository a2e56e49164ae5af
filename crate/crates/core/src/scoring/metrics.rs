use serde::{Deserialize, Serialize};

use super::calibrate::{check_scores, error_rates};
use super::{Label, LabeledScore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
    pub auc: f64,
    pub n_live: usize,
    pub n_spoof: usize,
}

/// Error rates at `threshold` (spoof iff score > threshold) plus the
/// threshold-free AUC.
pub fn compute_metrics(test_scores: &[LabeledScore], threshold: f64) -> Result<MetricsReport> {
    let (n_live, n_spoof) = check_scores(test_scores)?;
    let (far, frr) = error_rates(test_scores, threshold);
    Ok(MetricsReport {
        far,
        frr,
        hter: (far + frr) / 2.0,
        auc: auc(test_scores)?,
        n_live,
        n_spoof,
    })
}

/// Probability that a random spoof sample scores above a random live sample,
/// ties counting one half.
pub fn auc(scores: &[LabeledScore]) -> Result<f64> {
    let (n_live, n_spoof) = check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Counted in half-units so ties stay exact.
    let mut halves: u128 = 0;
    let mut live_below: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].score;
        let (mut live, mut spoof) = (0u128, 0u128);
        while i < sorted.len() && sorted[i].score == value {
            match sorted[i].label {
                Label::Live => live += 1,
                Label::Spoof => spoof += 1,
            }
            i += 1;
        }
        halves += spoof * (2 * live_below + live);
        live_below += live;
    }
    Ok(halves as f64 / (2 * n_live as u128 * n_spoof as u128) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn ls(s: f64, spoof: bool) -> LabeledScore {
        LabeledScore::new(s, if spoof { Label::Spoof } else { Label::Live })
    }

    #[test]
    fn hter_substitution() {
        // 10 spoof with 2 accepted, 10 live with 1 rejected at T = 0.5.
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(ls(if i < 2 { 0.4 } else { 0.9 }, true));
            v.push(ls(if i < 1 { 0.6 } else { 0.1 }, false));
        }
        let m = compute_metrics(&v, 0.5).unwrap();
        assert!((m.far - 0.2).abs() < 1e-15 && (m.frr - 0.1).abs() < 1e-15);
        assert!((m.hter - 0.15).abs() < 1e-15);
        assert_eq!((m.n_live, m.n_spoof), (10, 10));
    }

    #[test]
    fn separated_and_tied_auc() {
        let v = vec![ls(0.1, false), ls(0.2, false), ls(0.8, true)];
        assert_eq!(auc(&v).unwrap(), 1.0);
        let v = vec![ls(0.5, false), ls(0.5, true)];
        assert_eq!(auc(&v).unwrap(), 0.5);
        let v = vec![ls(0.9, false), ls(0.1, true)];
        assert_eq!(auc(&v).unwrap(), 0.0);
    }

    #[test]
    fn single_label_is_data_error() {
        assert!(matches!(compute_metrics(&[ls(0.1, true)], 0.0), Err(Error::Data(_))));
    }
}
