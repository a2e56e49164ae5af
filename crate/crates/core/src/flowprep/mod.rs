//! Video to optical-flow patch preprocessing.
//!
//! Frames are decoded and resampled to a target rate, consecutive pairs are run
//! through a dense flow estimator, each flow field is rendered on the optical-flow
//! color wheel, and the resulting RGB maps are cut into fixed-size patches scaled
//! to `[-1, 1]`.

mod color;
mod flo;
mod flow;
mod patches;
mod video;

pub use color::{flow_to_color, wheel_angle_of, FlowMapImage, MagnitudeNorm};
pub use flo::{read_flo, write_flo, FLO_MAGIC};
pub use flow::{
    estimate_flow, EstimatorRegistry, FarnebackEstimator, FarnebackParams, FlowEstimator, FlowField, DEFAULT_ESTIMATOR,
};
pub use patches::{extract_patches, extract_patches_at, PatchBatch, PatchOrigin};
pub use video::{extract_frames, sample_indices, write_y4m, FrameSequence};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the generator sees for each consecutive frame pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Color-coded optical flow between the two frames.
    #[default]
    Flow,
    /// The second frame itself (appearance only, no motion cue).
    Appearance,
}

/// Settings for turning a video into flow maps and patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSettings {
    pub input: InputMode,
    pub fps: u32,
    pub estimator: String,
    pub window: usize,
    pub stride: usize,
    pub magnitude: MagnitudeNorm,
}

impl Default for PrepSettings {
    fn default() -> Self {
        Self {
            input: InputMode::Flow,
            fps: 30,
            estimator: DEFAULT_ESTIMATOR.to_string(),
            window: 32,
            stride: 32,
            magnitude: MagnitudeNorm::Fixed(8.0),
        }
    }
}

impl PrepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if let MagnitudeNorm::Fixed(m) = self.magnitude {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("fixed max magnitude must be > 0, got {m}")));
            }
        }
        EstimatorRegistry::with_defaults().get(&self.estimator)?;
        Ok(())
    }
}

/// Flow maps for every consecutive frame pair of a sequence, in order.
pub fn flow_maps(
    video: &FrameSequence,
    estimator: &dyn FlowEstimator,
    magnitude: MagnitudeNorm,
) -> Result<Vec<FlowMapImage>> {
    video
        .frames()
        .windows(2)
        .map(|pair| {
            let field = estimate_flow(&pair[0], &pair[1], estimator)?;
            flow_to_color(&field, magnitude)
        })
        .collect()
}

/// One model input image per consecutive frame pair, as selected by
/// `prep.input`.
pub fn video_maps(video: &FrameSequence, prep: &PrepSettings) -> Result<Vec<FlowMapImage>> {
    match prep.input {
        InputMode::Flow => {
            let estimator = EstimatorRegistry::with_defaults().get(&prep.estimator)?;
            flow_maps(video, estimator.as_ref(), prep.magnitude)
        }
        InputMode::Appearance => Ok(video.frames()[1..]
            .iter()
            .map(|f| FlowMapImage {
                pixels: f.clone(),
                max_magnitude: 1.0,
            })
            .collect()),
    }
}

/// Patches of every map, tagged with the map's index.
pub fn video_patches(maps: &[FlowMapImage], window: usize, stride: usize) -> Result<PatchBatch> {
    let batches = maps
        .iter()
        .enumerate()
        .map(|(i, m)| extract_patches_at(m, i, window, stride))
        .collect::<Result<Vec<_>>>()?;
    PatchBatch::concat(&batches)
}
