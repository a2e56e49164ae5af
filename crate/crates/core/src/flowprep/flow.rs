use std::collections::BTreeMap;
use std::sync::Arc;

use image::RgbImage;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Name of the estimator used when none is configured.
pub const DEFAULT_ESTIMATOR: &str = "farneback";

/// Dense displacement field: `u` horizontal, `v` vertical, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::Shape(format!("u is {:?} but v is {:?}", u.dim(), v.dim())));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
        }
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn max_norm(&self) -> f32 {
        self.u
            .iter()
            .zip(self.v.iter())
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }

    pub fn mean_norm(&self) -> f64 {
        let n = self.u.len().max(1) as f64;
        self.u
            .iter()
            .zip(self.v.iter())
            .map(|(u, v)| ((u * u + v * v) as f64).sqrt())
            .sum::<f64>()
            / n
    }
}

/// A dense optical-flow estimator working on grayscale intensity images in `[0, 1]`.
pub trait FlowEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// Displacement taking `prev` to `next`: content at `x` in `prev` appears at
    /// `x + (u, v)` in `next`. Inputs have identical dimensions.
    fn estimate_gray(&self, prev: &Array2<f32>, next: &Array2<f32>) -> FlowField;
}

/// Named flow estimators. Lookups by unknown name fail with a config error.
#[derive(Clone)]
pub struct EstimatorRegistry {
    entries: BTreeMap<String, Arc<dyn FlowEstimator>>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(FarnebackEstimator::default()));
        r
    }

    pub fn register(&mut self, estimator: Arc<dyn FlowEstimator>) {
        self.entries.insert(estimator.name().to_string(), estimator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn FlowEstimator>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown flow estimator {name:?}; registered: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

/// Estimate dense flow between two RGB frames.
pub fn estimate_flow(frame_a: &RgbImage, frame_b: &RgbImage, estimator: &dyn FlowEstimator) -> Result<FlowField> {
    if frame_a.dimensions() != frame_b.dimensions() {
        return Err(Error::Shape(format!(
            "frames differ in size: {:?} vs {:?}",
            frame_a.dimensions(),
            frame_b.dimensions()
        )));
    }
    let a = to_gray(frame_a);
    let b = to_gray(frame_b);
    Ok(estimator.estimate_gray(&a, &b))
}

pub(crate) fn to_gray(img: &RgbImage) -> Array2<f32> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        let p = img.get_pixel(x as u32, y as u32).0;
        (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0
    })
}

/// Parameters of the polynomial-expansion estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarnebackParams {
    /// Number of pyramid levels including the full-resolution one.
    pub levels: usize,
    /// Smallest side allowed for a pyramid level.
    pub min_size: usize,
    /// Half-width of the polynomial fitting neighbourhood.
    pub poly_n: usize,
    /// Gaussian applicability width for the polynomial fit.
    pub poly_sigma: f64,
    /// Gaussian width of the displacement averaging window.
    pub win_sigma: f64,
    /// Refinement passes per level.
    pub iterations: usize,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self {
            levels: 4,
            min_size: 12,
            poly_n: 2,
            poly_sigma: 1.1,
            win_sigma: 2.5,
            iterations: 4,
        }
    }
}

/// Dense two-frame flow from quadratic polynomial expansion over a coarse-to-fine pyramid.
#[derive(Debug, Clone, Default)]
pub struct FarnebackEstimator {
    pub params: FarnebackParams,
}

/// Per-pixel quadratic model `x^T A x + b^T x + c`, with `A` symmetric.
struct Expansion {
    bx: Array2<f64>,
    by: Array2<f64>,
    axx: Array2<f64>,
    ayy: Array2<f64>,
    axy: Array2<f64>,
}

impl FarnebackEstimator {
    /// Weighted least-squares projection filters for the basis
    /// `{1, x, y, x^2, y^2, xy}` over a `(2n+1)^2` neighbourhood.
    fn projection(&self) -> Vec<[f64; 6]> {
        let n = self.params.poly_n as i64;
        let s2 = self.params.poly_sigma * self.params.poly_sigma;
        let mut pts = Vec::new();
        for dy in -n..=n {
            for dx in -n..=n {
                let (x, y) = (dx as f64, dy as f64);
                let w = (-(x * x + y * y) / (2.0 * s2)).exp();
                pts.push((w, [1.0, x, y, x * x, y * y, x * y]));
            }
        }
        // Normal matrix B^T W B.
        let mut g = [[0.0f64; 6]; 6];
        for (w, b) in &pts {
            for i in 0..6 {
                for j in 0..6 {
                    g[i][j] += w * b[i] * b[j];
                }
            }
        }
        let ginv = invert6(g);
        pts.iter()
            .map(|(w, b)| {
                let mut f = [0.0; 6];
                for i in 0..6 {
                    f[i] = (0..6).map(|j| ginv[i][j] * b[j]).sum::<f64>() * w;
                }
                f
            })
            .collect()
    }

    fn expand(&self, img: &Array2<f64>, proj: &[[f64; 6]]) -> Expansion {
        let (h, w) = img.dim();
        let n = self.params.poly_n as i64;
        let mut out = Expansion {
            bx: Array2::zeros((h, w)),
            by: Array2::zeros((h, w)),
            axx: Array2::zeros((h, w)),
            ayy: Array2::zeros((h, w)),
            axy: Array2::zeros((h, w)),
        };
        for y in 0..h {
            for x in 0..w {
                let mut r = [0.0; 6];
                let mut k = 0;
                for dy in -n..=n {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    for dx in -n..=n {
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        let p = img[[yy, xx]];
                        for i in 1..6 {
                            r[i] += proj[k][i] * p;
                        }
                        k += 1;
                    }
                }
                out.bx[[y, x]] = r[1];
                out.by[[y, x]] = r[2];
                out.axx[[y, x]] = r[3];
                out.ayy[[y, x]] = r[4];
                out.axy[[y, x]] = r[5] / 2.0;
            }
        }
        out
    }

    /// One refinement pass: returns the updated displacement for every pixel.
    fn refine(
        &self,
        e1: &Expansion,
        e2: &Expansion,
        flow_u: &Array2<f64>,
        flow_v: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let (h, w) = flow_u.dim();
        // Per-pixel normal-equation terms G = A^T A and h = A^T db.
        let mut g11 = Array2::zeros((h, w));
        let mut g12 = Array2::zeros((h, w));
        let mut g22 = Array2::zeros((h, w));
        let mut h1 = Array2::zeros((h, w));
        let mut h2 = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let du = flow_u[[y, x]];
                let dv = flow_v[[y, x]];
                let sx = x as f64 + du;
                let sy = y as f64 + dv;
                let (bx2, by2, axx2, ayy2, axy2) = (
                    bilinear(&e2.bx, sx, sy),
                    bilinear(&e2.by, sx, sy),
                    bilinear(&e2.axx, sx, sy),
                    bilinear(&e2.ayy, sx, sy),
                    bilinear(&e2.axy, sx, sy),
                );
                let a11 = 0.5 * (e1.axx[[y, x]] + axx2);
                let a22 = 0.5 * (e1.ayy[[y, x]] + ayy2);
                let a12 = 0.5 * (e1.axy[[y, x]] + axy2);
                let db1 = -0.5 * (bx2 - e1.bx[[y, x]]) + a11 * du + a12 * dv;
                let db2 = -0.5 * (by2 - e1.by[[y, x]]) + a12 * du + a22 * dv;
                g11[[y, x]] = a11 * a11 + a12 * a12;
                g12[[y, x]] = a12 * (a11 + a22);
                g22[[y, x]] = a12 * a12 + a22 * a22;
                h1[[y, x]] = a11 * db1 + a12 * db2;
                h2[[y, x]] = a12 * db1 + a22 * db2;
            }
        }
        let s = self.params.win_sigma;
        let (g11, g12, g22, h1, h2) = (
            gaussian_blur(&g11, s),
            gaussian_blur(&g12, s),
            gaussian_blur(&g22, s),
            gaussian_blur(&h1, s),
            gaussian_blur(&h2, s),
        );
        let mut nu = Array2::zeros((h, w));
        let mut nv = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                // Small ridge term keeps textureless regions at zero motion.
                let a = g11[[y, x]] + 1e-9;
                let b = g12[[y, x]];
                let d = g22[[y, x]] + 1e-9;
                let det = a * d - b * b;
                if det.abs() < 1e-18 {
                    continue;
                }
                nu[[y, x]] = (d * h1[[y, x]] - b * h2[[y, x]]) / det;
                nv[[y, x]] = (a * h2[[y, x]] - b * h1[[y, x]]) / det;
            }
        }
        (nu, nv)
    }
}

impl FlowEstimator for FarnebackEstimator {
    fn name(&self) -> &str {
        DEFAULT_ESTIMATOR
    }

    fn estimate_gray(&self, prev: &Array2<f32>, next: &Array2<f32>) -> FlowField {
        let (h, w) = prev.dim();
        let p = &self.params;
        let proj = self.projection();

        let mut pyr_a = vec![prev.mapv(|x| x as f64)];
        let mut pyr_b = vec![next.mapv(|x| x as f64)];
        while pyr_a.len() < p.levels {
            let last = pyr_a.last().unwrap();
            let (lh, lw) = last.dim();
            let (nh, nw) = (lh.div_ceil(2), lw.div_ceil(2));
            if nh < p.min_size || nw < p.min_size {
                break;
            }
            let a = downsample(&gaussian_blur(last, 1.0), nh, nw);
            let b = downsample(&gaussian_blur(pyr_b.last().unwrap(), 1.0), nh, nw);
            pyr_a.push(a);
            pyr_b.push(b);
        }

        let mut flow_u: Option<Array2<f64>> = None;
        let mut flow_v: Option<Array2<f64>> = None;
        for level in (0..pyr_a.len()).rev() {
            let (lh, lw) = pyr_a[level].dim();
            let (mut fu, mut fv) = match (flow_u.take(), flow_v.take()) {
                (Some(u), Some(v)) => {
                    let sx = lw as f64 / u.dim().1 as f64;
                    let sy = lh as f64 / u.dim().0 as f64;
                    (
                        upsample(&u, lh, lw).mapv(|x| x * sx),
                        upsample(&v, lh, lw).mapv(|x| x * sy),
                    )
                }
                _ => (Array2::zeros((lh, lw)), Array2::zeros((lh, lw))),
            };
            let e1 = self.expand(&pyr_a[level], &proj);
            let e2 = self.expand(&pyr_b[level], &proj);
            for _ in 0..p.iterations {
                let (nu, nv) = self.refine(&e1, &e2, &fu, &fv);
                fu = nu;
                fv = nv;
            }
            flow_u = Some(fu);
            flow_v = Some(fv);
        }
        let u = flow_u.unwrap_or_else(|| Array2::zeros((h, w)));
        let v = flow_v.unwrap_or_else(|| Array2::zeros((h, w)));
        FlowField {
            u: u.mapv(|x| x as f32),
            v: v.mapv(|x| x as f32),
        }
    }
}

/// Bilinear sample with clamp-to-edge borders.
fn bilinear(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[[y0, x0]] + fx * (img[[y0, x1]] - img[[y0, x0]]);
    let bot = img[[y1, x0]] + fx * (img[[y1, x1]] - img[[y1, x0]]);
    top + fy * (bot - top)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub(crate) fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as i64 + i as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * img[[y, xx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as i64 + i as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[[yy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

fn downsample(img: &Array2<f64>, nh: usize, nw: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    Array2::from_shape_fn((nh, nw), |(y, x)| {
        bilinear(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}

fn upsample(img: &Array2<f64>, nh: usize, nw: usize) -> Array2<f64> {
    downsample(img, nh, nw)
}

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = m;
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let piv = (col..6)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..6 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..6 {
            if i != col {
                let f = a[i][col];
                for j in 0..6 {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Smooth random texture, wrapped so shifts can be periodic.
    fn texture(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
        let blurred = gaussian_blur(&noise, 1.5);
        let (lo, hi) = blurred
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        blurred.mapv(|x| (x - lo) / (hi - lo))
    }

    fn to_rgb(t: &Array2<f64>) -> RgbImage {
        let (h, w) = t.dim();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let g = (t[[y as usize, x as usize]] * 255.0).round() as u8;
            Rgb([g, g, g])
        })
    }

    fn median(mut xs: Vec<f32>) -> f32 {
        xs.sort_by(|a, b| a.total_cmp(b));
        xs[xs.len() / 2]
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let img = to_rgb(&texture(48, 48, 1));
        let f = estimate_flow(&img, &img, &FarnebackEstimator::default()).unwrap();
        assert!(f.u.iter().chain(f.v.iter()).all(|x| x.abs() <= 1e-6));
    }

    #[test]
    fn wrapped_shift_right_is_recovered() {
        let t = texture(64, 64, 7);
        let shifted = Array2::from_shape_fn((64, 64), |(y, x)| t[[y, (x + 64 - 3) % 64]]);
        let f = estimate_flow(&to_rgb(&t), &to_rgb(&shifted), &FarnebackEstimator::default()).unwrap();
        let mu = median(f.u.iter().cloned().collect());
        let mv = median(f.v.iter().cloned().collect());
        assert!((mu - 3.0).abs() < 0.5, "median u = {mu}");
        assert!(mv.abs() < 0.5, "median v = {mv}");
    }

    #[test]
    fn vertical_shift_is_recovered() {
        let t = texture(64, 64, 9);
        let shifted = Array2::from_shape_fn((64, 64), |(y, x)| t[[(y + 64 - 2) % 64, x]]);
        let f = estimate_flow(&to_rgb(&t), &to_rgb(&shifted), &FarnebackEstimator::default()).unwrap();
        let mu = median(f.u.iter().cloned().collect());
        let mv = median(f.v.iter().cloned().collect());
        assert!(mu.abs() < 0.5, "median u = {mu}");
        assert!((mv - 2.0).abs() < 0.5, "median v = {mv}");
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = RgbImage::new(64, 64);
        let b = RgbImage::new(32, 32);
        assert!(matches!(
            estimate_flow(&a, &b, &FarnebackEstimator::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn estimator_is_deterministic() {
        let a = to_rgb(&texture(40, 56, 3));
        let b = to_rgb(&texture(40, 56, 4));
        let e = FarnebackEstimator::default();
        let f1 = estimate_flow(&a, &b, &e).unwrap();
        let f2 = estimate_flow(&a, &b, &e).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.dims(), (40, 56));
    }

    #[test]
    fn registry_lookup() {
        let r = EstimatorRegistry::with_defaults();
        assert_eq!(r.get(DEFAULT_ESTIMATOR).unwrap().name(), "farneback");
        assert!(matches!(r.get("flownet2"), Err(Error::Config(_))));
    }

    #[test]
    fn projection_recovers_quadratic() {
        let e = FarnebackEstimator::default();
        let proj = e.projection();
        // f = 0.3 + 0.5x - 0.2y + 0.1x^2 + 0.05y^2 - 0.07xy sampled on a 15x15 grid.
        let img = Array2::from_shape_fn((15, 15), |(y, x)| {
            let (x, y) = (x as f64 - 7.0, y as f64 - 7.0);
            0.3 + 0.5 * x - 0.2 * y + 0.1 * x * x + 0.05 * y * y - 0.07 * x * y
        });
        let ex = e.expand(&img, &proj);
        assert!((ex.bx[[7, 7]] - 0.5).abs() < 1e-9);
        assert!((ex.by[[7, 7]] + 0.2).abs() < 1e-9);
        assert!((ex.axx[[7, 7]] - 0.1).abs() < 1e-9);
        assert!((ex.ayy[[7, 7]] - 0.05).abs() < 1e-9);
        assert!((ex.axy[[7, 7]] + 0.035).abs() < 1e-9);
    }
}
