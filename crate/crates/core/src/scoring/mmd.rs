use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multipliers applied to the median pairwise distance to form the default
/// rbf bandwidths.
pub const DEFAULT_BANDWIDTH_FACTORS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Reference,
    Test,
}

/// Per-frame reconstruction errors of one video or of a reference pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub samples: Vec<f64>,
    pub source_tag: SourceTag,
    pub video_id: String,
}

impl ScoreDistribution {
    pub fn new(samples: Vec<f64>, source_tag: SourceTag, video_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("score distribution is empty".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Data(format!("score {s} is not a finite non-negative value")));
        }
        Ok(Self {
            samples,
            source_tag,
            video_id: video_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Keep at most `cap` samples, chosen by a seeded draw without replacement
    /// (original order preserved).
    pub fn capped(mut self, cap: usize, seed: u64) -> Self {
        if self.samples.len() > cap && cap > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, self.samples.len(), cap).into_vec();
            idx.sort_unstable();
            self.samples = idx.into_iter().map(|i| self.samples[i]).collect();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelFamily {
    /// `k(x, y) = x * y`
    Linear,
    /// `k(x, y) = exp(-(x - y)^2 / (2 sigma^2))` for each bandwidth `sigma`.
    Rbf { bandwidths: Vec<f64> },
}

/// Convex combination of basis kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub mixture_weights: Vec<f64>,
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            mixture_weights: vec![1.0],
        }
    }

    /// Equal-weight rbf mixture.
    pub fn rbf(bandwidths: Vec<f64>) -> Self {
        let n = bandwidths.len().max(1);
        Self {
            mixture_weights: vec![1.0 / n as f64; n],
            family: KernelFamily::Rbf { bandwidths },
        }
    }

    /// Default rbf mixture: [`DEFAULT_BANDWIDTH_FACTORS`] times the median
    /// pairwise distance of the pooled samples (1 when that median is 0).
    pub fn median_heuristic(pooled: &[f64], seed: u64) -> Self {
        let med = median_pairwise_distance(pooled, 2000, seed);
        let base = if med > 0.0 && med.is_finite() { med } else { 1.0 };
        Self::rbf(DEFAULT_BANDWIDTH_FACTORS.iter().map(|f| f * base).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.mixture_weights;
        if w.is_empty() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("mixture weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {sum}, expected 1")));
        }
        match &self.family {
            KernelFamily::Linear => {
                if w.len() != 1 {
                    return Err(Error::Config("linear kernel takes a single weight".into()));
                }
            }
            KernelFamily::Rbf { bandwidths } => {
                if bandwidths.len() != w.len() {
                    return Err(Error::Config(format!(
                        "{} bandwidths but {} mixture weights",
                        bandwidths.len(),
                        w.len()
                    )));
                }
                if bandwidths.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
                    return Err(Error::Config("rbf bandwidths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match &self.family {
            KernelFamily::Linear => x * y,
            KernelFamily::Rbf { bandwidths } => {
                let d2 = (x - y) * (x - y);
                bandwidths
                    .iter()
                    .zip(&self.mixture_weights)
                    .map(|(s, w)| w * (-d2 / (2.0 * s * s)).exp())
                    .sum()
            }
        }
    }

    fn mean_cross(&self, a: &[f64], b: &[f64]) -> f64 {
        if let KernelFamily::Linear = self.family {
            // Bilinear kernel: the double mean factorizes exactly.
            return mean(a) * mean(b);
        }
        let mut total = 0.0;
        for &x in a {
            let mut row = 0.0;
            for &y in b {
                row += self.eval(x, y);
            }
            total += row;
        }
        total / (a.len() as f64 * b.len() as f64)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of `|x_i - x_j|` over pairs `i < j`. Above `max_points` samples a
/// seeded subset of that size is used.
pub fn median_pairwise_distance(samples: &[f64], max_points: usize, seed: u64) -> f64 {
    let pts: Vec<f64> = if samples.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, samples.len(), max_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| samples[i]).collect()
    } else {
        samples.to_vec()
    };
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push((pts[i] - pts[j]).abs());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().cloned().fold(f64::MIN, f64::max);
        0.5 * (lower + upper)
    }
}

/// Biased (V-statistic) kernel MMD between two score distributions:
/// `sqrt(max(0, mean k(a,a') - 2 mean k(a,b) + mean k(b,b')))`.
pub fn mmd(a: &ScoreDistribution, b: &ScoreDistribution, kernel: &KernelSpec) -> Result<f64> {
    kernel.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("mmd needs two non-empty distributions".into()));
    }
    if let KernelFamily::Linear = kernel.family {
        return Ok(linear_mmd(&a.samples, &b.samples));
    }
    let aa = kernel.mean_cross(&a.samples, &a.samples);
    let bb = kernel.mean_cross(&b.samples, &b.samples);
    let ab = kernel.mean_cross(&a.samples, &b.samples);
    Ok(combine(aa, ab, bb))
}

/// Under the linear kernel the V-statistic collapses to `(mean(a) - mean(b))^2`;
/// taking the difference first avoids cancellation.
fn linear_mmd(a: &[f64], b: &[f64]) -> f64 {
    (mean(a) - mean(b)).abs()
}

fn combine(aa: f64, ab: f64, bb: f64) -> f64 {
    (aa - 2.0 * ab + bb).max(0.0).sqrt()
}

/// A reference distribution with its kernel self-term precomputed, for scoring
/// many test distributions against it.
#[derive(Debug, Clone)]
pub struct MmdReference {
    reference: ScoreDistribution,
    kernel: KernelSpec,
    self_term: f64,
}

impl MmdReference {
    pub fn new(reference: ScoreDistribution, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        if reference.is_empty() {
            return Err(Error::Data("reference distribution is empty".into()));
        }
        let self_term = kernel.mean_cross(&reference.samples, &reference.samples);
        Ok(Self {
            reference,
            kernel,
            self_term,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn reference(&self) -> &ScoreDistribution {
        &self.reference
    }

    /// Same value as [`mmd`]`(reference, test, kernel)`.
    pub fn score(&self, test: &ScoreDistribution) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::Data("test distribution is empty".into()));
        }
        if let KernelFamily::Linear = self.kernel.family {
            return Ok(linear_mmd(&self.reference.samples, &test.samples));
        }
        let bb = self.kernel.mean_cross(&test.samples, &test.samples);
        let ab = self.kernel.mean_cross(&self.reference.samples, &test.samples);
        Ok(combine(self.self_term, ab, bb))
    }
}
