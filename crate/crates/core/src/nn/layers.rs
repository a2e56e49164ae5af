use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor};

/// A learnable array with a stable name.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
}

impl<F: Real> Param<F> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![F::zero(); n],
        }
    }

    fn gaussian(name: String, shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: (0..n).map(|_| F::of(dist.sample(rng))).collect(),
        }
    }
}

/// Square-kernel convolution geometry. For a transposed convolution, `in_size`
/// is the small side and the layer maps it up to `out_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn conv_out(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn deconv_out(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// Batch normalization over every axis but the channel one.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    pub momentum: f64,
    pub eps: f64,
}

/// Whether normalization layers use the batch's own statistics or the running
/// estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per normalization layer: batch mean and unbiased batch variance.
pub type NormStats<F> = Vec<(Vec<F>, Vec<F>)>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Conv {
        weight: Param<F>,
        bias: Param<F>,
        geom: ConvGeom,
    },
    Deconv {
        weight: Param<F>,
        bias: Param<F>,
        geom: ConvGeom,
    },
    Dense {
        weight: Param<F>,
        bias: Param<F>,
    },
    /// `C x N x H x W` to `(C*H*W) x N x 1 x 1`.
    Flatten,
    /// Inverse of [`Layer::Flatten`].
    Unflatten {
        c: usize,
        h: usize,
        w: usize,
    },
    Act(Activation),
    Norm(BatchNorm<F>),
}

impl<F: Real> Layer<F> {
    pub fn conv(name: &str, cin: usize, cout: usize, geom: ConvGeom, std: f64, rng: &mut impl Rng) -> Self {
        let k = geom.kernel;
        Layer::Conv {
            weight: Param::gaussian(format!("{name}.weight"), vec![cout, cin, k, k], std, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
            geom,
        }
    }

    pub fn deconv(name: &str, cin: usize, cout: usize, geom: ConvGeom, std: f64, rng: &mut impl Rng) -> Self {
        let k = geom.kernel;
        Layer::Deconv {
            weight: Param::gaussian(format!("{name}.weight"), vec![cin, cout, k, k], std, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
            geom,
        }
    }

    pub fn dense(name: &str, fin: usize, fout: usize, std: f64, rng: &mut impl Rng) -> Self {
        Layer::Dense {
            weight: Param::gaussian(format!("{name}.weight"), vec![fout, fin], std, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![fout]),
        }
    }

    /// Batch normalization with `gamma ~ N(1, std)`, zero `beta`, and running
    /// statistics starting at mean 0, variance 1.
    pub fn batch_norm(name: &str, channels: usize, std: f64, rng: &mut impl Rng) -> Self {
        let mut gamma = Param::gaussian(format!("{name}.gamma"), vec![channels], std, rng);
        gamma.value.iter_mut().for_each(|g| *g = *g + F::one());
        let mut running_var = Param::zeros(format!("{name}.running_var"), vec![channels]);
        running_var.value.iter_mut().for_each(|v| *v = F::one());
        Layer::Norm(BatchNorm {
            gamma,
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: Param::zeros(format!("{name}.running_mean"), vec![channels]),
            running_var,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Trainable arrays.
    pub fn params(&self) -> Vec<&Param<F>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Deconv { weight, bias, .. } | Layer::Dense { weight, bias } => {
                vec![weight, bias]
            }
            Layer::Norm(bn) => vec![&bn.gamma, &bn.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Deconv { weight, bias, .. } | Layer::Dense { weight, bias } => {
                vec![weight, bias]
            }
            Layer::Norm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => vec![],
        }
    }

    /// Non-trainable state that still belongs in a checkpoint.
    pub fn buffers(&self) -> Vec<&Param<F>> {
        match self {
            Layer::Norm(bn) => vec![&bn.running_mean, &bn.running_var],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<F>> {
        match self {
            Layer::Norm(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            _ => vec![],
        }
    }
}

/// Saved intermediate values from a recorded forward pass.
#[derive(Debug, Clone)]
enum Cache<F> {
    /// im2col buffer of the input plus the input geometry.
    Conv {
        cols: Vec<F>,
        input: Tensor<F>,
    },
    /// The layer input.
    Input(Tensor<F>),
    /// The layer output (tanh / sigmoid derivatives use it).
    Output(Tensor<F>),
    Shape {
        c: usize,
        h: usize,
        w: usize,
    },
    /// Normalized input, per-channel inverse std, and the batch statistics.
    Norm {
        xhat: Tensor<F>,
        inv_std: Vec<F>,
        mean: Vec<F>,
        var: Vec<F>,
    },
}

/// Per-layer caches of a recorded forward pass, consumed by [`Sequential::backward`].
#[derive(Debug, Clone)]
pub struct Trace<F> {
    caches: Vec<Cache<F>>,
}

impl<F: Real> Trace<F> {
    /// Batch statistics of every normalization layer, in layer order.
    pub fn norm_stats(&self) -> NormStats<F> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                Cache::Norm { mean, var, .. } => Some((mean.clone(), var.clone())),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<F> {
    pub layers: Vec<Layer<F>>,
}

fn mat<F>(data: &[F], rows: usize, cols: usize) -> ArrayView2<'_, F> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

fn mat_mut<F>(data: &mut [F], rows: usize, cols: usize) -> ArrayViewMut2<'_, F> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

/// Unfold `x` into a `(C*k*k) x (N*OH*OW)` matrix of convolution windows.
fn im2col<F: Real>(x: &Tensor<F>, g: ConvGeom, oh: usize, ow: usize) -> Vec<F> {
    let k = g.kernel;
    let np = x.n * oh * ow;
    let mut cols = vec![F::zero(); x.c * k * k * np];
    for c in 0..x.c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for n in 0..x.n {
                    let src = &x.data[(c * x.n + n) * x.h * x.w..(c * x.n + n + 1) * x.h * x.w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let base = (n * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                dst[base + ox] = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add windows back into a `C x N x H x W` tensor.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Real>(cols: &[F], c: usize, n: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize) -> Tensor<F> {
    let k = g.kernel;
    let np = n * oh * ow;
    let mut out = Tensor::zeros(c, n, h, w);
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * np..(row + 1) * np];
                for ni in 0..n {
                    let dst = &mut out.data[(ci * n + ni) * h * w..(ci * n + ni + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ni * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] =
                                    dst[iy as usize * w + ix as usize] + src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn add_channel_bias<F: Real>(t: &mut Tensor<F>, bias: &[F]) {
    let per = t.n * t.h * t.w;
    for (c, chunk) in t.data.chunks_mut(per).enumerate() {
        let b = bias[c];
        chunk.iter_mut().for_each(|x| *x = *x + b);
    }
}

fn channel_sums<F: Real>(t: &Tensor<F>) -> Vec<F> {
    let per = t.n * t.h * t.w;
    t.data
        .chunks(per)
        .map(|ch| ch.iter().fold(F::zero(), |a, &b| a + b))
        .collect()
}

fn add_into<F: Real>(acc: &mut [F], delta: &[F]) {
    for (a, d) in acc.iter_mut().zip(delta) {
        *a = *a + *d;
    }
}

impl Activation {
    fn apply<F: Real>(&self, x: F) -> F {
        match *self {
            Activation::Relu => x.max(F::zero()),
            Activation::LeakyRelu(a) => {
                if x > F::zero() {
                    x
                } else {
                    x * F::of(a)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => F::one() / (F::one() + (-x).exp()),
        }
    }

    fn uses_output(&self) -> bool {
        matches!(self, Activation::Tanh | Activation::Sigmoid)
    }

    /// Derivative given the cached input (relu family) or output (tanh, sigmoid).
    fn grad<F: Real>(&self, cached: F) -> F {
        match *self {
            Activation::Relu => {
                if cached > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if cached > F::zero() {
                    F::one()
                } else {
                    F::of(a)
                }
            }
            Activation::Tanh => F::one() - cached * cached,
            Activation::Sigmoid => cached * (F::one() - cached),
        }
    }
}

impl<F: Real> Sequential<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Self { layers }
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Zeroed gradient buffers aligned with [`Sequential::params`].
    pub fn zero_grads(&self) -> Vec<Vec<F>> {
        self.params().iter().map(|p| vec![F::zero(); p.value.len()]).collect()
    }

    pub fn buffers(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    /// Inference pass (running normalization statistics).
    pub fn forward(&self, x: Tensor<F>) -> Tensor<F> {
        self.forward_mode(x, Mode::Eval)
    }

    pub fn forward_mode(&self, x: Tensor<F>, mode: Mode) -> Tensor<F> {
        self.layers
            .iter()
            .fold(x, |x, layer| layer_forward(layer, x, mode, None))
    }

    /// Training-mode pass (batch normalization statistics) recording what
    /// [`Sequential::backward`] needs.
    pub fn forward_traced(&self, x: Tensor<F>) -> (Tensor<F>, Trace<F>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = x;
        for layer in &self.layers {
            x = layer_forward(layer, x, Mode::Train, Some(&mut caches));
        }
        (x, Trace { caches })
    }

    /// Fold batch statistics into the running estimates with each layer's
    /// momentum.
    pub fn update_running_stats(&mut self, stats: &NormStats<F>) {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let Layer::Norm(bn) = layer {
                let (mean, var) = it.next().expect("one stats entry per norm layer");
                let m = F::of(bn.momentum);
                for (r, b) in bn.running_mean.value.iter_mut().zip(mean) {
                    *r = (F::one() - m) * *r + m * *b;
                }
                for (r, b) in bn.running_var.value.iter_mut().zip(var) {
                    *r = (F::one() - m) * *r + m * *b;
                }
            }
        }
    }

    /// Backpropagate `dy` through the recorded pass. Parameter gradients are
    /// accumulated into `grads` when given; returns the gradient wrt the input.
    pub fn backward(&self, trace: &Trace<F>, dy: Tensor<F>, mut grads: Option<&mut [Vec<F>]>) -> Tensor<F> {
        assert_eq!(trace.caches.len(), self.layers.len(), "trace/network mismatch");
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.params().len();
        }
        let mut dy = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g = grads.as_deref_mut().map(|g| &mut g[offsets[i]..]);
            dy = layer_backward(layer, &trace.caches[i], dy, g);
        }
        dy
    }
}

fn layer_forward<F: Real>(layer: &Layer<F>, x: Tensor<F>, mode: Mode, caches: Option<&mut Vec<Cache<F>>>) -> Tensor<F> {
    match layer {
        Layer::Conv { weight, bias, geom } => {
            let (cout, k) = (weight.shape[0], geom.kernel);
            assert_eq!(weight.shape[1], x.c, "conv input channels");
            let (oh, ow) = (geom.conv_out(x.h), geom.conv_out(x.w));
            let cols = im2col(&x, *geom, oh, ow);
            let np = x.n * oh * ow;
            let ck = x.c * k * k;
            let mut y = Tensor::zeros(cout, x.n, oh, ow);
            general_mat_mul(
                F::one(),
                &mat(&weight.value, cout, ck),
                &mat(&cols, ck, np),
                F::zero(),
                &mut mat_mut(&mut y.data, cout, np),
            );
            add_channel_bias(&mut y, &bias.value);
            if let Some(c) = caches {
                c.push(Cache::Conv { cols, input: x });
            }
            y
        }
        Layer::Deconv { weight, bias, geom } => {
            let (cin, cout, k) = (weight.shape[0], weight.shape[1], geom.kernel);
            assert_eq!(cin, x.c, "deconv input channels");
            let (oh, ow) = (geom.deconv_out(x.h), geom.deconv_out(x.w));
            let np = x.n * x.h * x.w;
            let mut cols = vec![F::zero(); cout * k * k * np];
            general_mat_mul(
                F::one(),
                &mat(&weight.value, cin, cout * k * k).t(),
                &mat(&x.data, cin, np),
                F::zero(),
                &mut mat_mut(&mut cols, cout * k * k, np),
            );
            let mut y = col2im(&cols, cout, x.n, oh, ow, *geom, x.h, x.w);
            add_channel_bias(&mut y, &bias.value);
            if let Some(c) = caches {
                c.push(Cache::Input(x));
            }
            y
        }
        Layer::Dense { weight, bias } => {
            let (fout, fin) = (weight.shape[0], weight.shape[1]);
            assert!(x.h == 1 && x.w == 1 && x.c == fin, "dense input shape");
            let mut y = Tensor::zeros(fout, x.n, 1, 1);
            general_mat_mul(
                F::one(),
                &mat(&weight.value, fout, fin),
                &mat(&x.data, fin, x.n),
                F::zero(),
                &mut mat_mut(&mut y.data, fout, x.n),
            );
            add_channel_bias(&mut y, &bias.value);
            if let Some(c) = caches {
                c.push(Cache::Input(x));
            }
            y
        }
        Layer::Flatten => {
            let (c, n, h, w) = (x.c, x.n, x.h, x.w);
            let mut y = Tensor::zeros(c * h * w, n, 1, 1);
            for ci in 0..c {
                for ni in 0..n {
                    for p in 0..h * w {
                        y.data[(ci * h * w + p) * n + ni] = x.data[(ci * n + ni) * h * w + p];
                    }
                }
            }
            if let Some(cc) = caches {
                cc.push(Cache::Shape { c, h, w });
            }
            y
        }
        Layer::Unflatten { c, h, w } => {
            let (c, h, w) = (*c, *h, *w);
            assert_eq!(x.c, c * h * w, "unflatten features");
            let n = x.n;
            let mut y = Tensor::zeros(c, n, h, w);
            for ci in 0..c {
                for ni in 0..n {
                    for p in 0..h * w {
                        y.data[(ci * n + ni) * h * w + p] = x.data[(ci * h * w + p) * n + ni];
                    }
                }
            }
            if let Some(cc) = caches {
                cc.push(Cache::Shape { c, h, w });
            }
            y
        }
        Layer::Act(a) => {
            let y = x.map(|v| a.apply(v));
            if let Some(c) = caches {
                c.push(if a.uses_output() {
                    Cache::Output(y.clone())
                } else {
                    Cache::Input(x)
                });
            }
            y
        }
        Layer::Norm(bn) => {
            let per = x.n * x.h * x.w;
            let eps = F::of(bn.eps);
            let (mean, var): (Vec<F>, Vec<F>) = match mode {
                Mode::Eval => (bn.running_mean.value.clone(), bn.running_var.value.clone()),
                Mode::Train => x
                    .data
                    .chunks(per)
                    .map(|ch| {
                        let m = ch.iter().fold(F::zero(), |a, &b| a + b) / F::of(per as f64);
                        let v = ch.iter().fold(F::zero(), |a, &b| a + (b - m) * (b - m)) / F::of(per as f64);
                        (m, v)
                    })
                    .unzip(),
            };
            let inv_std: Vec<F> = var.iter().map(|v| F::one() / (*v + eps).sqrt()).collect();
            let mut xhat = x;
            for (c, ch) in xhat.data.chunks_mut(per).enumerate() {
                ch.iter_mut().for_each(|v| *v = (*v - mean[c]) * inv_std[c]);
            }
            let mut y = xhat.clone();
            for (c, ch) in y.data.chunks_mut(per).enumerate() {
                let (g, b) = (bn.gamma.value[c], bn.beta.value[c]);
                ch.iter_mut().for_each(|v| *v = *v * g + b);
            }
            if let Some(cc) = caches {
                let unbias = if per > 1 {
                    F::of(per as f64 / (per - 1) as f64)
                } else {
                    F::one()
                };
                cc.push(Cache::Norm {
                    xhat,
                    inv_std,
                    mean,
                    var: var.into_iter().map(|v| v * unbias).collect(),
                });
            }
            y
        }
    }
}

fn layer_backward<F: Real>(
    layer: &Layer<F>,
    cache: &Cache<F>,
    dy: Tensor<F>,
    grads: Option<&mut [Vec<F>]>,
) -> Tensor<F> {
    match (layer, cache) {
        (Layer::Conv { weight, geom, .. }, Cache::Conv { cols, input }) => {
            let (cout, k) = (weight.shape[0], geom.kernel);
            let np = dy.n * dy.h * dy.w;
            let ck = input.c * k * k;
            if let Some(g) = grads {
                let mut dw = vec![F::zero(); cout * ck];
                general_mat_mul(
                    F::one(),
                    &mat(&dy.data, cout, np),
                    &mat(cols, ck, np).t(),
                    F::zero(),
                    &mut mat_mut(&mut dw, cout, ck),
                );
                add_into(&mut g[0], &dw);
                add_into(&mut g[1], &channel_sums(&dy));
            }
            let mut dcols = vec![F::zero(); ck * np];
            general_mat_mul(
                F::one(),
                &mat(&weight.value, cout, ck).t(),
                &mat(&dy.data, cout, np),
                F::zero(),
                &mut mat_mut(&mut dcols, ck, np),
            );
            col2im(&dcols, input.c, input.n, input.h, input.w, *geom, dy.h, dy.w)
        }
        (Layer::Deconv { weight, geom, .. }, Cache::Input(x)) => {
            let (cin, cout, k) = (weight.shape[0], weight.shape[1], geom.kernel);
            let np = x.n * x.h * x.w;
            let dcols = im2col(&dy, *geom, x.h, x.w);
            if let Some(g) = grads {
                let mut dw = vec![F::zero(); cin * cout * k * k];
                general_mat_mul(
                    F::one(),
                    &mat(&x.data, cin, np),
                    &mat(&dcols, cout * k * k, np).t(),
                    F::zero(),
                    &mut mat_mut(&mut dw, cin, cout * k * k),
                );
                add_into(&mut g[0], &dw);
                add_into(&mut g[1], &channel_sums(&dy));
            }
            let mut dx = Tensor::zeros(cin, x.n, x.h, x.w);
            general_mat_mul(
                F::one(),
                &mat(&weight.value, cin, cout * k * k),
                &mat(&dcols, cout * k * k, np),
                F::zero(),
                &mut mat_mut(&mut dx.data, cin, np),
            );
            dx
        }
        (Layer::Dense { weight, .. }, Cache::Input(x)) => {
            let (fout, fin) = (weight.shape[0], weight.shape[1]);
            if let Some(g) = grads {
                let mut dw = vec![F::zero(); fout * fin];
                general_mat_mul(
                    F::one(),
                    &mat(&dy.data, fout, x.n),
                    &mat(&x.data, fin, x.n).t(),
                    F::zero(),
                    &mut mat_mut(&mut dw, fout, fin),
                );
                add_into(&mut g[0], &dw);
                add_into(&mut g[1], &channel_sums(&dy));
            }
            let mut dx = Tensor::zeros(fin, x.n, 1, 1);
            general_mat_mul(
                F::one(),
                &mat(&weight.value, fout, fin).t(),
                &mat(&dy.data, fout, x.n),
                F::zero(),
                &mut mat_mut(&mut dx.data, fin, x.n),
            );
            dx
        }
        (Layer::Flatten, Cache::Shape { c, h, w }) => {
            // Reverse of flatten is unflatten.
            layer_forward(&Layer::Unflatten { c: *c, h: *h, w: *w }, dy, Mode::Eval, None)
        }
        (Layer::Unflatten { .. }, Cache::Shape { .. }) => layer_forward(&Layer::Flatten, dy, Mode::Eval, None),
        (Layer::Act(a), Cache::Input(x)) | (Layer::Act(a), Cache::Output(x)) => {
            let mut dx = dy;
            for (d, &c) in dx.data.iter_mut().zip(&x.data) {
                *d = *d * a.grad(c);
            }
            dx
        }
        (Layer::Norm(bn), Cache::Norm { xhat, inv_std, .. }) => {
            let per = dy.n * dy.h * dy.w;
            let nf = F::of(per as f64);
            let mut dx = dy;
            let mut dgamma = vec![F::zero(); dx.c];
            let mut dbeta = vec![F::zero(); dx.c];
            for (c, (ch, xh)) in dx.data.chunks_mut(per).zip(xhat.data.chunks(per)).enumerate() {
                let (sum_dy, sum_dy_xh) = ch
                    .iter()
                    .zip(xh)
                    .fold((F::zero(), F::zero()), |(a, b), (&d, &h)| (a + d, b + d * h));
                dgamma[c] = sum_dy_xh;
                dbeta[c] = sum_dy;
                let k = bn.gamma.value[c] * inv_std[c] / nf;
                for (d, &h) in ch.iter_mut().zip(xh) {
                    *d = k * (nf * *d - sum_dy - h * sum_dy_xh);
                }
            }
            if let Some(g) = grads {
                add_into(&mut g[0], &dgamma);
                add_into(&mut g[1], &dbeta);
            }
            dx
        }
        _ => unreachable!("cache does not match layer"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(c: usize, n: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
        let data = (0..c * n * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, c, n, h, w)
    }

    const G: ConvGeom = ConvGeom {
        kernel: 4,
        stride: 2,
        pad: 1,
    };

    /// Direct nested-loop convolution used as an independent reference.
    fn conv_reference(x: &Tensor<f64>, w: &Param<f64>, b: &Param<f64>) -> Tensor<f64> {
        let (cout, cin, k) = (w.shape[0], w.shape[1], w.shape[2]);
        let (oh, ow) = (G.conv_out(x.h), G.conv_out(x.w));
        let mut y = Tensor::zeros(cout, x.n, oh, ow);
        for co in 0..cout {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b.value[co];
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * 2 + ki) as isize - 1;
                                    let ix = (ox * 2 + kj) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    s += w.value[((co * cin + ci) * k + ki) * k + kj]
                                        * x.data[x.idx(ci, n, iy as usize, ix as usize)];
                                }
                            }
                        }
                        let i = y.idx(co, n, oy, ox);
                        y.data[i] = s;
                    }
                }
            }
        }
        y
    }

    /// Transposed convolution by scattering every input pixel.
    fn deconv_reference(x: &Tensor<f64>, w: &Param<f64>, b: &Param<f64>) -> Tensor<f64> {
        let (cin, cout, k) = (w.shape[0], w.shape[1], w.shape[2]);
        let (oh, ow) = (G.deconv_out(x.h), G.deconv_out(x.w));
        let mut y = Tensor::zeros(cout, x.n, oh, ow);
        for co in 0..cout {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let i = y.idx(co, n, oy, ox);
                        y.data[i] = b.value[co];
                    }
                }
            }
        }
        for ci in 0..cin {
            for n in 0..x.n {
                for iy in 0..x.h {
                    for ix in 0..x.w {
                        let v = x.data[x.idx(ci, n, iy, ix)];
                        for co in 0..cout {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let oy = (iy * 2 + ki) as isize - 1;
                                    let ox = (ix * 2 + kj) as isize - 1;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    let i = y.idx(co, n, oy as usize, ox as usize);
                                    y.data[i] += v * w.value[((ci * cout + co) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Layer::<f64>::conv("c", 3, 5, G, 0.5, &mut rng);
        let x = rand_tensor(3, 2, 8, 8, &mut rng);
        let Layer::Conv { weight, bias, .. } = &layer else {
            unreachable!()
        };
        let mut bias = bias.clone();
        bias.value.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let layer = Layer::Conv {
            weight: weight.clone(),
            bias: bias.clone(),
            geom: G,
        };
        let y = Sequential::new(vec![layer.clone()]).forward(x.clone());
        let r = conv_reference(&x, weight, &bias);
        assert_eq!((y.c, y.n, y.h, y.w), (5, 2, 4, 4));
        for (a, b) in y.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deconv_matches_scatter_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Layer::<f64>::deconv("d", 4, 3, G, 0.5, &mut rng);
        let Layer::Deconv { weight, bias, .. } = &layer else {
            unreachable!()
        };
        let x = rand_tensor(4, 3, 4, 4, &mut rng);
        let y = Sequential::new(vec![layer.clone()]).forward(x.clone());
        let r = deconv_reference(&x, weight, bias);
        assert_eq!((y.c, y.n, y.h, y.w), (3, 3, 8, 8));
        for (a, b) in y.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Fourth-order central difference of `f` at 0.
    fn five_point(f: impl Fn(f64) -> f64, h: f64) -> f64 {
        (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
    }

    /// The backward pass of every layer type agrees with central differences of
    /// `sum(y * r)` for a fixed random `r`.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Sequential::new(vec![
            Layer::conv("c1", 2, 3, G, 0.4, &mut rng),
            Layer::batch_norm("n1", 3, 0.1, &mut rng),
            Layer::Act(Activation::LeakyRelu(0.2)),
            Layer::Flatten,
            Layer::dense("fc", 3 * 4 * 4, 6, 0.3, &mut rng),
            Layer::Act(Activation::Tanh),
            Layer::dense("fc2", 6, 2 * 4 * 4, 0.3, &mut rng),
            Layer::Unflatten { c: 2, h: 4, w: 4 },
            Layer::Act(Activation::Relu),
            Layer::deconv("d1", 2, 2, G, 0.4, &mut rng),
            Layer::Act(Activation::Sigmoid),
        ]);
        let x = rand_tensor(2, 2, 8, 8, &mut rng);
        let (y, trace) = net.forward_traced(x.clone());
        let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = Tensor::from_vec(r.clone(), y.c, y.n, y.h, y.w);
        let mut grads = net.zero_grads();
        let dx = net.backward(&trace, dy, Some(&mut grads));

        let objective = |n: &Sequential<f64>, x: &Tensor<f64>| -> f64 {
            n.forward_mode(x.clone(), Mode::Train)
                .data
                .iter()
                .zip(&r)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-4;
        for (pi, p) in net.params().iter().enumerate() {
            for j in (0..p.value.len()).step_by(3) {
                let fd = five_point(
                    |d| {
                        let mut moved = net.clone();
                        moved.params_mut()[pi].value[j] += d;
                        objective(&moved, &x)
                    },
                    h,
                );
                let an = grads[pi][j];
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(an.abs()).max(1e-3),
                    "{} [{j}]: analytic {an} vs fd {fd}",
                    p.name
                );
            }
        }
        for j in (0..x.len()).step_by(5) {
            let fd = five_point(
                |d| {
                    let mut moved = x.clone();
                    moved.data[j] += d;
                    objective(&net, &moved)
                },
                h,
            );
            assert!(
                (fd - dx.data[j]).abs() <= 1e-6 * fd.abs().max(1e-3),
                "input [{j}]: analytic {} vs fd {fd}",
                dx.data[j]
            );
        }
    }

    #[test]
    fn batch_norm_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Sequential::new(vec![Layer::batch_norm("n", 2, 0.0, &mut rng)]);
        let x = rand_tensor(2, 4, 3, 3, &mut rng).map(|v| 3.0 * v + 5.0);
        let (y, trace) = net.forward_traced(x.clone());
        for ch in y.data.chunks(36) {
            let m: f64 = ch.iter().sum::<f64>() / 36.0;
            let v: f64 = ch.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 36.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-3);
        }
        // Fresh running stats are the identity transform up to eps.
        let e = net.forward(x.clone());
        assert!(e
            .data
            .iter()
            .zip(&x.data)
            .all(|(a, b)| (a - b / (1.0 + 1e-5f64).sqrt()).abs() < 1e-12));
        net.update_running_stats(&trace.norm_stats());
        let Layer::Norm(bn) = &net.layers[0] else {
            unreachable!()
        };
        let batch_mean = x.data[..36].iter().sum::<f64>() / 36.0;
        assert!((bn.running_mean.value[0] - 0.1 * batch_mean).abs() < 1e-12);
        assert_eq!(net.buffers().len(), 2);
    }
}
