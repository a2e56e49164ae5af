use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::mmd::{ScoreDistribution, SourceTag};
use crate::error::{Error, Result};
use crate::flowprep::{extract_patches, video_maps, FlowMapImage, FrameSequence, PatchBatch, PrepSettings};
use crate::gan::Generator;
use crate::nn::{Real, Tensor};

/// Patches pushed through the generator at once while scoring.
const SCORE_CHUNK: usize = 256;

/// How a patch is compared with its reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Mean absolute pixel difference between patch and reconstruction.
    #[default]
    Pixel,
    /// Mean absolute difference between the encoder codes of the patch and of
    /// its reconstruction.
    Latent,
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMode::Pixel => "pixel",
            ScoreMode::Latent => "latent",
        })
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(ScoreMode::Pixel),
            "latent" => Ok(ScoreMode::Latent),
            other => Err(Error::Config(format!("unknown score mode {other:?} (pixel, latent)"))),
        }
    }
}

/// One score per sample of `batch`.
pub fn frame_scores<F: Real>(g: &Generator<F>, batch: &PatchBatch, mode: ScoreMode) -> Result<Vec<f64>> {
    frame_scores_array(g, &batch.patches, mode)
}

pub(crate) fn frame_scores_array<F: Real>(g: &Generator<F>, images: &Array4<f32>, mode: ScoreMode) -> Result<Vec<f64>> {
    let n = images.shape()[0];
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + SCORE_CHUNK).min(n);
        let chunk = images.slice(s![start..end, .., .., ..]).to_owned();
        let x = Tensor::<F>::from_nhwc(&chunk);
        let x_hat = g.reconstruct(&x)?;
        match mode {
            ScoreMode::Pixel => out.extend(per_sample_l1(&x, &x_hat)),
            ScoreMode::Latent => {
                let z = g.encode(&x)?;
                let z_hat = g.encode(&x_hat)?;
                out.extend(per_sample_l1(&z, &z_hat));
            }
        }
        start = end;
    }
    Ok(out)
}

fn per_sample_l1<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Vec<f64> {
    let mut sums = vec![0.0f64; a.n];
    let plane = a.h * a.w;
    for c in 0..a.c {
        for (n, sum) in sums.iter_mut().enumerate() {
            let off = (c * a.n + n) * plane;
            for i in off..off + plane {
                *sum += (a.data[i] - b.data[i]).abs().as_f64();
            }
        }
    }
    let len = a.sample_len() as f64;
    sums.into_iter().map(|s| s / len).collect()
}

/// Reconstruction error of one flow map: the mean over its patches of the
/// per-patch score.
pub fn frame_score<F: Real>(
    g: &Generator<F>,
    flow_map: &FlowMapImage,
    window: usize,
    stride: usize,
    mode: ScoreMode,
) -> Result<f64> {
    let patches = extract_patches(flow_map, window, stride)?;
    let scores = frame_scores(g, &patches, mode)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Frame scores of every consecutive-frame flow map of a video, in order.
pub fn video_distribution<F: Real>(
    g: &Generator<F>,
    video: &FrameSequence,
    prep: &PrepSettings,
    mode: ScoreMode,
) -> Result<ScoreDistribution> {
    if video.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: video.len(),
        });
    }
    let maps = video_maps(video, prep)?;
    map_distribution(g, &maps, prep, mode, video.source_id())
}

/// Frame scores of already computed maps.
pub fn map_distribution<F: Real>(
    g: &Generator<F>,
    maps: &[FlowMapImage],
    prep: &PrepSettings,
    mode: ScoreMode,
    video_id: &str,
) -> Result<ScoreDistribution> {
    let scores = maps
        .iter()
        .map(|m| frame_score(g, m, prep.window, prep.stride, mode))
        .collect::<Result<Vec<_>>>()?;
    ScoreDistribution::new(scores, SourceTag::Test, video_id)
}
