use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::flow::FlowField;
use crate::error::{Error, Result};

/// How flow vectors are normalized before color coding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudeNorm {
    /// Largest vector norm of the field itself (1 if the field is all zero).
    Auto,
    /// A fixed radius in pixels shared by every field, so colors are comparable across videos.
    Fixed(f32),
}

impl fmt::Display for MagnitudeNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MagnitudeNorm::Auto => f.write_str("auto"),
            MagnitudeNorm::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for MagnitudeNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(MagnitudeNorm::Auto);
        }
        s.parse::<f32>()
            .map(MagnitudeNorm::Fixed)
            .map_err(|_| Error::Config(format!("magnitude must be \"auto\" or a number, got {s:?}")))
    }
}

impl Serialize for MagnitudeNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MagnitudeNorm::Auto => s.serialize_str("auto"),
            MagnitudeNorm::Fixed(m) => s.serialize_f32(*m),
        }
    }
}

impl<'de> Deserialize<'de> for MagnitudeNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Value(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Value(v) => Ok(MagnitudeNorm::Fixed(v as f32)),
        }
    }
}

/// A color-coded flow field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapImage {
    pub pixels: RgbImage,
    /// Normalization radius in pixels that maps to full saturation.
    pub max_magnitude: f32,
}

impl FlowMapImage {
    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }

    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.pixels.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

// Segment lengths of the six-primary color wheel (red-yellow, yellow-green,
// green-cyan, cyan-blue, blue-magenta, magenta-red).
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

fn wheel() -> &'static [[f64; 3]; NCOLS] {
    static WHEEL: OnceLock<[[f64; 3]; NCOLS]> = OnceLock::new();
    WHEEL.get_or_init(|| {
        let mut w = [[0.0; 3]; NCOLS];
        let mut i = 0;
        let mut push = |len: usize, f: &dyn Fn(f64) -> [f64; 3]| {
            for k in 0..len {
                w[i] = f(k as f64 / len as f64);
                i += 1;
            }
        };
        push(RY, &|t| [1.0, t, 0.0]);
        push(YG, &|t| [1.0 - t, 1.0, 0.0]);
        push(GC, &|t| [0.0, 1.0, t]);
        push(CB, &|t| [0.0, 1.0 - t, 1.0]);
        push(BM, &|t| [t, 0.0, 1.0]);
        push(MR, &|t| [1.0, 0.0, 1.0 - t]);
        w
    })
}

/// Fully saturated wheel color (channels in [0, 1]) for a flow direction.
fn wheel_color(u: f64, v: f64) -> [f64; 3] {
    let w = wheel();
    let a = (-v).atan2(-u) / PI;
    let fk = (a + 1.0) / 2.0 * (NCOLS - 1) as f64;
    let k0 = fk.floor() as usize % NCOLS;
    let k1 = (k0 + 1) % NCOLS;
    let f = fk - fk.floor();
    let mut c = [0.0; 3];
    for ch in 0..3 {
        c[ch] = (1.0 - f) * w[k0][ch] + f * w[k1][ch];
    }
    c
}

/// Render a flow field on the color wheel: hue from direction, saturation from
/// the clipped normalized magnitude, zero motion as white.
pub fn flow_to_color(field: &FlowField, max_magnitude: MagnitudeNorm) -> Result<FlowMapImage> {
    if !field.is_finite() {
        return Err(Error::Data("flow field contains non-finite values".into()));
    }
    let radius = match max_magnitude {
        MagnitudeNorm::Fixed(m) => {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::Config(format!("max_magnitude must be > 0, got {m}")));
            }
            m
        }
        MagnitudeNorm::Auto => {
            let max = field.max_norm();
            if max > 0.0 {
                max
            } else {
                1.0
            }
        }
    };
    let (h, w) = field.dims();
    let mut pixels = RgbImage::new(w as u32, h as u32);
    let r = radius as f64;
    for y in 0..h {
        for x in 0..w {
            let u = field.u[[y, x]] as f64;
            let v = field.v[[y, x]] as f64;
            let sat = ((u * u + v * v).sqrt() / r).min(1.0);
            let px = if sat == 0.0 {
                [255u8; 3]
            } else {
                let c = wheel_color(u, v);
                c.map(|ch| (255.0 * (1.0 - sat * (1.0 - ch))).round() as u8)
            };
            pixels.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(FlowMapImage {
        pixels,
        max_magnitude: radius,
    })
}

/// Recover the flow direction (radians, `atan2(v, u)` convention) encoded by a
/// color-wheel pixel. Returns `None` for achromatic pixels.
pub fn wheel_angle_of(px: [u8; 3]) -> Option<f64> {
    let c = px.map(|x| x as f64);
    let max = c.iter().cloned().fold(f64::MIN, f64::max);
    let min = c.iter().cloned().fold(f64::MAX, f64::min);
    if max - min < 0.5 {
        return None;
    }
    let argmax = (0..3).fold(0, |m, i| if c[i] > c[m] { i } else { m });
    let argmin = (0..3).fold(0, |m, i| if c[i] < c[m] { i } else { m });
    // Position within the wheel, measured in wheel-color units [0, NCOLS).
    let t = |ch: usize| (c[ch] - min) / (max - min);
    let pos = match (argmax, argmin) {
        (0, 2) => t(1) * RY as f64,
        (1, 2) => RY as f64 + (1.0 - t(0)) * YG as f64,
        (1, 0) => (RY + YG) as f64 + t(2) * GC as f64,
        (2, 0) => (RY + YG + GC) as f64 + (1.0 - t(1)) * CB as f64,
        (2, 1) => (RY + YG + GC + CB) as f64 + t(0) * BM as f64,
        _ => (RY + YG + GC + CB + BM) as f64 + (1.0 - t(2)) * MR as f64,
    };
    // The encoder only reaches positions up to NCOLS - 1; the seam between the
    // last color and the first is angle 0 from either side.
    let pos = pos.min((NCOLS - 1) as f64);
    // Invert fk = (a + 1) / 2 * (NCOLS - 1), with a = atan2(-v, -u) / pi.
    let a = pos / (NCOLS - 1) as f64 * 2.0 - 1.0;
    let ang = a * PI + PI; // atan2(v, u) = atan2(-v, -u) + pi
    Some(wrap_angle(ang))
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut x = a % two_pi;
    if x <= -PI {
        x += two_pi;
    } else if x > PI {
        x -= two_pi;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn single(u: f32, v: f32) -> FlowField {
        FlowField::new(Array2::from_elem((1, 1), u), Array2::from_elem((1, 1), v)).unwrap()
    }

    #[test]
    fn zero_flow_is_white() {
        let f = FlowField::zeros(4, 5);
        let img = flow_to_color(&f, MagnitudeNorm::Auto).unwrap();
        assert!(img.pixels.pixels().all(|p| p.0 == [255, 255, 255]));
        assert_eq!(img.max_magnitude, 1.0);
    }

    #[test]
    fn unit_rightward_flow_is_fully_saturated_wheel_start() {
        let img = flow_to_color(&single(2.0, 0.0), MagnitudeNorm::Fixed(2.0)).unwrap();
        let expected = wheel_color(1.0, 0.0).map(|c| (255.0 * c).round() as u8);
        assert_eq!(img.pixels.get_pixel(0, 0).0, expected);
        // Fully saturated: one channel hits zero.
        assert!(expected.contains(&0));
    }

    #[test]
    fn saturation_clips_beyond_radius() {
        let a = flow_to_color(&single(2.0, 0.0), MagnitudeNorm::Fixed(2.0)).unwrap();
        let b = flow_to_color(&single(4.0, 0.0), MagnitudeNorm::Fixed(2.0)).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = single(f32::NAN, 0.0);
        assert!(matches!(flow_to_color(&f, MagnitudeNorm::Auto), Err(Error::Data(_))));
        let f = single(1.0, 0.0);
        assert!(matches!(
            flow_to_color(&f, MagnitudeNorm::Fixed(0.0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            flow_to_color(&f, MagnitudeNorm::Fixed(-1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn wheel_decode_inverts_encoding() {
        for k in 0..360 {
            let ang = (k as f64).to_radians() - PI + 0.001;
            let c = wheel_color(ang.cos(), ang.sin()).map(|c| (255.0 * c).round() as u8);
            let back = wheel_angle_of(c).unwrap();
            let diff = wrap_angle(back - ang).abs().to_degrees();
            assert!(diff < 1.0, "angle {k}: decoded off by {diff} degrees");
        }
    }

    #[test]
    fn magnitude_norm_parses() {
        assert_eq!("auto".parse::<MagnitudeNorm>().unwrap(), MagnitudeNorm::Auto);
        assert_eq!("2.5".parse::<MagnitudeNorm>().unwrap(), MagnitudeNorm::Fixed(2.5));
        assert!("fast".parse::<MagnitudeNorm>().is_err());
    }
}
