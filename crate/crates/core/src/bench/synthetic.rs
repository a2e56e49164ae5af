use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flowprep::FrameSequence;
use crate::scoring::Label;

const SYNTHETIC_FPS: u32 = 30;
const WAVES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    /// Smooth drift with slowly turning direction plus small nonrigid jitter.
    Live,
    /// Static scene with sensor noise only.
    SpoofFixed,
    /// Large, frame-to-frame random global shake with speckle noise.
    SpoofHand,
}

impl MotionModel {
    pub fn label(self) -> Label {
        match self {
            MotionModel::Live => Label::Live,
            _ => Label::Spoof,
        }
    }

    fn default_noise(self) -> f64 {
        match self {
            MotionModel::Live | MotionModel::SpoofFixed => 1.0,
            MotionModel::SpoofHand => 10.0,
        }
    }
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionModel::Live => "live",
            MotionModel::SpoofFixed => "spoof-fixed",
            MotionModel::SpoofHand => "spoof-hand",
        })
    }
}

impl FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(MotionModel::Live),
            "spoof-fixed" => Ok(MotionModel::SpoofFixed),
            "spoof-hand" => Ok(MotionModel::SpoofHand),
            other => Err(Error::Config(format!(
                "unknown motion model {other:?} (live, spoof-fixed, spoof-hand)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideoSpec {
    pub n_frames: usize,
    pub height: u32,
    pub width: u32,
    pub motion: MotionModel,
    /// Per-pixel Gaussian noise sigma in 8-bit units.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticVideoSpec {
    /// 30 frames of 64x64 with the motion model's default noise level.
    pub fn new(motion: MotionModel, seed: u64) -> Self {
        Self {
            n_frames: 30,
            height: 64,
            width: 64,
            motion,
            noise: motion.default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                got: self.n_frames,
            });
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Size(format!(
                "{}x{} frames are too small",
                self.width, self.height
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Smooth, band-limited color texture defined on the continuous plane.
struct Texture {
    waves: Vec<[f64; 6]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..WAVES)
            .map(|_| {
                let wavelength = rng.random_range(7.0..22.0);
                let angle = rng.random_range(0.0..TAU);
                let k = TAU / wavelength;
                [
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.5..1.5),
                    rng.random_range(0.5..1.5),
                    rng.random_range(0.5..1.5),
                ]
            })
            .collect();
        Self { waves }
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [0.0; 3];
        for w in &self.waves {
            let s = (w[0] * x + w[1] * y + w[2]).sin();
            c[0] += w[3] * s;
            c[1] += w[4] * s;
            c[2] += w[5] * s;
        }
        let scale = 90.0 / (WAVES as f64).sqrt();
        c.map(|v| 128.0 + scale * v)
    }
}

/// Render a deterministic synthetic face-stand-in video and its label.
pub fn generate_synthetic_video(spec: &SyntheticVideoSpec) -> Result<(FrameSequence, Label)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let texture = Texture::random(&mut rng);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;

    // Global offset of the scene per frame.
    let mut offsets = vec![(0.0f64, 0.0f64); spec.n_frames];
    let (jitter_amp, jitter_freq, jitter_phase) = (0.6, TAU / rng.random_range(20.0..40.0), rng.random_range(0.0..TAU));
    match spec.motion {
        MotionModel::Live => {
            let speed = rng.random_range(1.5..2.5);
            let mut heading = rng.random_range(0.0..TAU);
            let wobble = rng.random_range(0.0..TAU);
            for t in 1..spec.n_frames {
                heading += rng.random_range(-0.15..0.15);
                let s = speed * (1.0 + 0.3 * (0.4 * t as f64 + wobble).sin());
                let (px, py) = offsets[t - 1];
                offsets[t] = (px + s * heading.cos(), py + s * heading.sin());
            }
        }
        MotionModel::SpoofFixed => {}
        MotionModel::SpoofHand => {
            for o in offsets.iter_mut().skip(1) {
                let r = rng.random_range(2.0..5.0);
                let a = rng.random_range(0.0..TAU);
                *o = (r * a.cos(), r * a.sin());
            }
        }
    }

    let frames = (0..spec.n_frames)
        .map(|t| {
            let (ox, oy) = offsets[t];
            let phase = jitter_phase + 0.5 * t as f64;
            RgbImage::from_fn(spec.width, spec.height, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                let (jx, jy) = if spec.motion == MotionModel::Live {
                    (
                        jitter_amp * (jitter_freq * yf + phase).sin(),
                        jitter_amp * (jitter_freq * xf + 0.7 * phase).cos(),
                    )
                } else {
                    (0.0, 0.0)
                };
                let c = texture.sample(xf - ox - jx, yf - oy - jy);
                let mut px = [0u8; 3];
                for ch in 0..3 {
                    let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    px[ch] = (c[ch] + n).round().clamp(0.0, 255.0) as u8;
                }
                Rgb(px)
            })
        })
        .collect();
    let id = format!("{}-{}", spec.motion, spec.seed);
    Ok((FrameSequence::new(frames, SYNTHETIC_FPS, id)?, spec.motion.label()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        for m in [MotionModel::Live, MotionModel::SpoofFixed, MotionModel::SpoofHand] {
            let spec = SyntheticVideoSpec {
                n_frames: 4,
                ..SyntheticVideoSpec::new(m, 7)
            };
            let (a, la) = generate_synthetic_video(&spec).unwrap();
            let (b, lb) = generate_synthetic_video(&spec).unwrap();
            assert_eq!(a.frames(), b.frames());
            assert_eq!(la, lb);
            assert_eq!(la, m.label());
            assert_eq!(a.len(), 4);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = SyntheticVideoSpec::new(MotionModel::Live, 0);
        s.n_frames = 1;
        assert!(matches!(
            generate_synthetic_video(&s),
            Err(Error::InsufficientFrames { .. })
        ));
        s.n_frames = 3;
        s.noise = -1.0;
        assert!(matches!(generate_synthetic_video(&s), Err(Error::Config(_))));
    }

    #[test]
    fn parse_motion_model() {
        for m in [MotionModel::Live, MotionModel::SpoofFixed, MotionModel::SpoofHand] {
            assert_eq!(m.to_string().parse::<MotionModel>().unwrap(), m);
        }
    }

    use crate::flowprep::{estimate_flow, EstimatorRegistry, FlowField};

    /// Flow fields of consecutive frames under the default estimator.
    fn flows(spec: &SyntheticVideoSpec) -> Vec<FlowField> {
        let (video, _) = generate_synthetic_video(spec).unwrap();
        let est = EstimatorRegistry::with_defaults().get("farneback").unwrap();
        video
            .frames()
            .windows(2)
            .map(|w| estimate_flow(&w[0], &w[1], est.as_ref()).unwrap())
            .collect()
    }

    fn mean_magnitude(fields: &[FlowField]) -> f64 {
        fields.iter().map(FlowField::mean_norm).sum::<f64>() / fields.len() as f64
    }

    /// Mean cosine similarity between consecutive flow fields taken as vectors.
    fn direction_correlation(fields: &[FlowField]) -> f64 {
        let dot = |a: &FlowField, b: &FlowField| {
            a.u.iter()
                .zip(&b.u)
                .chain(a.v.iter().zip(&b.v))
                .map(|(x, y)| (*x as f64) * (*y as f64))
                .sum::<f64>()
        };
        let corr: Vec<f64> = fields
            .windows(2)
            .map(|w| dot(&w[0], &w[1]) / (dot(&w[0], &w[0]) * dot(&w[1], &w[1])).sqrt())
            .collect();
        corr.iter().sum::<f64>() / corr.len() as f64
    }

    #[test]
    fn live_flow_is_large_and_coherent() {
        for seed in 0..3 {
            let f = flows(&SyntheticVideoSpec {
                n_frames: 10,
                ..SyntheticVideoSpec::new(MotionModel::Live, seed)
            });
            let (mag, corr) = (mean_magnitude(&f), direction_correlation(&f));
            assert!(mag > 1.0, "seed {seed}: mean magnitude {mag}");
            assert!(corr > 0.5, "seed {seed}: direction correlation {corr}");
        }
    }

    #[test]
    fn fixed_spoof_flow_is_near_zero() {
        for seed in 0..3 {
            let f = flows(&SyntheticVideoSpec {
                n_frames: 10,
                ..SyntheticVideoSpec::new(MotionModel::SpoofFixed, seed)
            });
            let mag = mean_magnitude(&f);
            assert!(mag < 0.2, "seed {seed}: mean magnitude {mag}");
        }
    }

    #[test]
    fn hand_spoof_flow_is_large_and_incoherent() {
        let f = flows(&SyntheticVideoSpec {
            n_frames: 10,
            ..SyntheticVideoSpec::new(MotionModel::SpoofHand, 0)
        });
        assert!(mean_magnitude(&f) > 2.0);
        assert!(direction_correlation(&f) < 0.2);
    }

    #[test]
    fn motion_judgment_separates_fixed_from_live() {
        use crate::flowprep::{video_maps, PrepSettings};
        use crate::scoring::{motion_judgment, MotionSettings};
        let m = MotionSettings::default();
        for seed in 0..3 {
            for (model, expected) in [(MotionModel::Live, true), (MotionModel::SpoofFixed, false)] {
                let (v, _) = generate_synthetic_video(&SyntheticVideoSpec::new(model, seed)).unwrap();
                let maps = video_maps(&v, &PrepSettings::default()).unwrap();
                let moving = motion_judgment(&maps, m.n_pairs, m.epsilon, seed).unwrap();
                assert_eq!(moving, expected, "{model} seed {seed}");
            }
        }
    }
}
