use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowprep::FlowMapImage;

/// No-motion pre-filter settings. Videos whose flow maps barely change are
/// reported spoof before any distribution scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSettings {
    pub enabled: bool,
    pub n_pairs: usize,
    /// In 8-bit pixel units.
    pub epsilon: f64,
}

impl Default for MotionSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            n_pairs: 10,
            epsilon: 2.0,
        }
    }
}

impl MotionSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Config("motion n_pairs must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "motion epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Mean absolute pixel difference over `n_pairs` seeded draws of adjacent
/// flow maps `(k, k + 1)`.
pub fn mean_pair_difference(flow_maps: &[FlowMapImage], n_pairs: usize, seed: u64) -> Result<f64> {
    if flow_maps.len() < 2 {
        return Err(Error::Data(format!(
            "motion judgment needs at least 2 flow maps, got {}",
            flow_maps.len()
        )));
    }
    if n_pairs == 0 {
        return Err(Error::Config("motion n_pairs must be positive".into()));
    }
    let dims = flow_maps[0].pixels.dimensions();
    if flow_maps.iter().any(|m| m.pixels.dimensions() != dims) {
        return Err(Error::Shape("flow maps differ in size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let k = rng.random_range(0..flow_maps.len() - 1);
        let a = flow_maps[k].pixels.as_raw();
        let b = flow_maps[k + 1].pixels.as_raw();
        let sum: u64 = a.iter().zip(b).map(|(x, y)| x.abs_diff(*y) as u64).sum();
        total += sum as f64 / a.len() as f64;
    }
    Ok(total / n_pairs as f64)
}

/// `true` when the mean pair difference strictly exceeds `epsilon`.
pub fn motion_judgment(flow_maps: &[FlowMapImage], n_pairs: usize, epsilon: f64, seed: u64) -> Result<bool> {
    Ok(mean_pair_difference(flow_maps, n_pairs, seed)? > epsilon)
}
