use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Decoded, rate-normalized video frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    fps: u32,
    source_id: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>, fps: u32, source_id: impl Into<String>) -> Result<Self> {
        if fps == 0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        if frames.len() < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                got: frames.len(),
            });
        }
        let dims = frames[0].dimensions();
        if let Some(bad) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(Error::Shape(format!(
                "frame {bad} is {:?}, frame 0 is {dims:?}",
                frames[bad].dimensions()
            )));
        }
        Ok(Self {
            frames,
            fps,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(width, height)`
    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }
}

/// Source frame indices kept when resampling `n_source` frames recorded at
/// `src_num / src_den` fps down to `target_fps`: `floor(k * src_fps / target_fps)`.
/// Targets above the source rate keep every frame once.
pub fn sample_indices(n_source: usize, src_num: u64, src_den: u64, target_fps: u32) -> Vec<usize> {
    let target = target_fps as u64;
    if src_den == 0 || target == 0 {
        return Vec::new();
    }
    // No upsampling: duplicated frames would fabricate zero-motion pairs.
    if src_num < target * src_den {
        return (0..n_source).collect();
    }
    (0u64..)
        .map(|k| (k * src_num / (src_den * target)) as usize)
        .take_while(|&i| i < n_source)
        .collect()
}

/// Decode a video and resample it to `target_fps`.
///
/// Supported inputs: YUV4MPEG2 (`.y4m`, 8-bit), animated GIF, and a directory of
/// PNG frames (sorted by file name, rate read from an optional `fps.txt`,
/// defaulting to 30).
pub fn extract_frames(video_path: impl AsRef<Path>, target_fps: u32) -> Result<FrameSequence> {
    let path = video_path.as_ref();
    if target_fps == 0 {
        return Err(Error::Config("target fps must be positive".into()));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let frames = if path.is_dir() {
        read_frame_dir(path, target_fps).map_err(|e| match e {
            Error::Io { source, .. } => decode_err(source.to_string()),
            other => other,
        })?
    } else {
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let file = File::open(path).map_err(|e| decode_err(e.to_string()))?;
        match ext.as_str() {
            "y4m" => read_y4m(BufReader::new(file), target_fps).map_err(decode_err)?,
            "gif" => read_gif(BufReader::new(file), target_fps).map_err(decode_err)?,
            other => return Err(decode_err(format!("unsupported container {other:?}"))),
        }
    };
    if frames.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    FrameSequence::new(frames, target_fps, source_id)
}

fn read_y4m<R: std::io::Read>(reader: R, target_fps: u32) -> std::result::Result<Vec<RgbImage>, String> {
    let mut dec = y4m::Decoder::new(reader).map_err(|e| format!("y4m header: {e:?}"))?;
    if dec.get_bytes_per_sample() != 1 {
        return Err("only 8-bit y4m is supported".into());
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    let cs = dec.get_colorspace();
    let (sx, sy) = match cs {
        y4m::Colorspace::C444 | y4m::Colorspace::Cmono => (1, 1),
        y4m::Colorspace::C422 => (2, 1),
        y4m::Colorspace::C420 | y4m::Colorspace::C420jpeg | y4m::Colorspace::C420paldv | y4m::Colorspace::C420mpeg2 => {
            (2, 2)
        }
        other => return Err(format!("unsupported y4m colorspace {other:?}")),
    };
    let mono = matches!(cs, y4m::Colorspace::Cmono);

    let mut decoded = Vec::new();
    loop {
        match dec.read_frame() {
            Ok(frame) => {
                let yp = frame.get_y_plane();
                let (up, vp) = (frame.get_u_plane(), frame.get_v_plane());
                let cw = w.div_ceil(sx);
                let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                    let (x, y) = (x as usize, y as usize);
                    let luma = yp[y * w + x] as f32;
                    if mono {
                        let l = luma as u8;
                        return Rgb([l, l, l]);
                    }
                    let ci = (y / sy) * cw + x / sx;
                    ycbcr_to_rgb(luma, up[ci] as f32, vp[ci] as f32)
                });
                decoded.push(img);
            }
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(format!("y4m frame {}: {e:?}", decoded.len())),
        }
    }
    let keep = sample_indices(decoded.len(), rate.num as u64, rate.den as u64, target_fps);
    Ok(keep.into_iter().map(|i| decoded[i].clone()).collect())
}

fn read_gif<R: std::io::BufRead + std::io::Seek>(
    reader: R,
    target_fps: u32,
) -> std::result::Result<Vec<RgbImage>, String> {
    use image::AnimationDecoder;
    let dec = image::codecs::gif::GifDecoder::new(reader).map_err(|e| e.to_string())?;
    let frames = dec.into_frames().collect_frames().map_err(|e| e.to_string())?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let (num, den) = first.delay().numer_denom_ms();
    // Frame delay num/den ms, so the rate is 1000*den/num fps.
    let (rate_num, rate_den) = if num == 0 {
        (30, 1)
    } else {
        (1000 * den as u64, num as u64)
    };
    let keep = sample_indices(frames.len(), rate_num, rate_den, target_fps);
    Ok(keep
        .into_iter()
        .map(|i| image::DynamicImage::ImageRgba8(frames[i].buffer().clone()).to_rgb8())
        .collect())
}

fn read_frame_dir(dir: &Path, target_fps: u32) -> Result<Vec<RgbImage>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let fps_file = dir.join("fps.txt");
    let src_fps: u64 = if fps_file.exists() {
        std::fs::read_to_string(&fps_file)
            .map_err(|e| Error::io(format!("reading {}", fps_file.display()), e))?
            .trim()
            .parse()
            .map_err(|_| Error::Decode {
                path: fps_file.clone(),
                reason: "fps.txt must hold a positive integer".into(),
            })?
    } else {
        30
    };
    let keep = sample_indices(files.len(), src_fps, 1, target_fps);
    keep.into_iter()
        .map(|i| {
            image::open(&files[i])
                .map(|im| im.to_rgb8())
                .map_err(|e| Error::Decode {
                    path: files[i].clone(),
                    reason: e.to_string(),
                })
        })
        .collect()
}

// Full-range BT.601 (JFIF) conversion, the convention of `C420jpeg`/`C444` y4m.
fn ycbcr_to_rgb(y: f32, cb: f32, cr: f32) -> Rgb<u8> {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    let r = y + 1.402 * cr;
    let g = y - 0.344_136 * cb - 0.714_136 * cr;
    let b = y + 1.772 * cb;
    Rgb([clamp_u8(r), clamp_u8(g), clamp_u8(b)])
}

fn rgb_to_ycbcr(p: Rgb<u8>) -> [u8; 3] {
    let [r, g, b] = p.0.map(|c| c as f32);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    [clamp_u8(y), clamp_u8(cb), clamp_u8(cr)]
}

fn clamp_u8(x: f32) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Encode frames as an 8-bit 4:4:4 YUV4MPEG2 stream.
pub fn write_y4m(frames: &[RgbImage], fps: u32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Some(first) = frames.first() else {
        return Err(Error::Data("no frames to write".into()));
    };
    let (w, h) = first.dimensions();
    let mut buf = Vec::new();
    {
        let writer = BufWriter::new(&mut buf);
        let mut enc = y4m::encode(w as usize, h as usize, y4m::Ratio::new(fps as usize, 1))
            .with_colorspace(y4m::Colorspace::C444)
            .write_header(writer)
            .map_err(|e| Error::Format(format!("y4m header: {e:?}")))?;
        for f in frames {
            if f.dimensions() != (w, h) {
                return Err(Error::Shape("all frames must share dimensions".into()));
            }
            let n = (w * h) as usize;
            let (mut yp, mut up, mut vp) = (vec![0u8; n], vec![0u8; n], vec![0u8; n]);
            for (i, p) in f.pixels().enumerate() {
                let [y, cb, cr] = rgb_to_ycbcr(*p);
                yp[i] = y;
                up[i] = cb;
                vp[i] = cr;
            }
            enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None))
                .map_err(|e| Error::Format(format!("y4m frame: {e:?}")))?;
        }
    }
    crate::util::write_atomic(path, &buf)
}
