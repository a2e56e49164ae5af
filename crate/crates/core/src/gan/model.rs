use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureConfig, STAGE};
use crate::error::{Error, Result};
use crate::flowprep::PatchBatch;
use crate::nn::{Activation, Layer, Mode, Real, Sequential, Tensor, Trace};

const INIT_STD: f64 = 0.02;
const LEAK: f64 = 0.2;
/// Discriminator logits are clipped here so probabilities stay strictly inside (0, 1).
const LOGIT_CLIP: f64 = 30.0;

/// Convolutional encoder-decoder reconstructing its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<F> {
    pub arch: ArchitectureConfig,
    pub seed: u64,
    pub encoder: Sequential<F>,
    pub decoder: Sequential<F>,
}

/// Convolutional real-vs-reconstructed classifier producing one logit per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<F> {
    pub arch: ArchitectureConfig,
    pub net: Sequential<F>,
}

/// Build both networks with N(0, 0.02) weights and zero biases, deterministic in `seed`.
pub fn init_models<F: Real>(arch: &ArchitectureConfig, seed: u64) -> Result<(Generator<F>, Discriminator<F>)> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bottleneck = arch.bottleneck_size();

    let mut enc = Vec::new();
    let mut cin = arch.input_channels;
    for (i, &f) in arch.encoder_filters.iter().enumerate() {
        enc.push(Layer::conv(&format!("g.enc{i}"), cin, f, STAGE, INIT_STD, &mut rng));
        enc.push(Layer::batch_norm(&format!("g.enc{i}.bn"), f, INIT_STD, &mut rng));
        enc.push(Layer::Act(Activation::LeakyRelu(LEAK)));
        cin = f;
    }
    let flat = cin * bottleneck * bottleneck;
    enc.push(Layer::Flatten);
    enc.push(Layer::dense("g.latent", flat, arch.latent_dim, INIT_STD, &mut rng));

    let mut dec = vec![
        Layer::dense("g.expand", arch.latent_dim, flat, INIT_STD, &mut rng),
        Layer::batch_norm("g.expand.bn", flat, INIT_STD, &mut rng),
        Layer::Act(Activation::Relu),
        Layer::Unflatten {
            c: cin,
            h: bottleneck,
            w: bottleneck,
        },
    ];
    let stages = arch.encoder_filters.len();
    for i in (0..stages).rev() {
        let cout = if i == 0 {
            arch.input_channels
        } else {
            arch.encoder_filters[i - 1]
        };
        dec.push(Layer::deconv(
            &format!("g.dec{i}"),
            cin,
            cout,
            STAGE,
            INIT_STD,
            &mut rng,
        ));
        if i == 0 {
            dec.push(Layer::Act(Activation::Tanh));
        } else {
            dec.push(Layer::batch_norm(&format!("g.dec{i}.bn"), cout, INIT_STD, &mut rng));
            dec.push(Layer::Act(Activation::Relu));
        }
        cin = cout;
    }

    let mut disc = Vec::new();
    let mut cin = arch.input_channels;
    for (i, &f) in arch.discriminator_filters.iter().enumerate() {
        disc.push(Layer::conv(&format!("d.conv{i}"), cin, f, STAGE, INIT_STD, &mut rng));
        disc.push(Layer::batch_norm(&format!("d.conv{i}.bn"), f, INIT_STD, &mut rng));
        disc.push(Layer::Act(Activation::LeakyRelu(LEAK)));
        cin = f;
    }
    let side = arch
        .discriminator_filters
        .iter()
        .fold(arch.input_size, |s, _| STAGE.conv_out(s));
    disc.push(Layer::Flatten);
    disc.push(Layer::dense("d.out", cin * side * side, 1, INIT_STD, &mut rng));

    Ok((
        Generator {
            arch: arch.clone(),
            seed,
            encoder: Sequential::new(enc),
            decoder: Sequential::new(dec),
        },
        Discriminator {
            arch: arch.clone(),
            net: Sequential::new(disc),
        },
    ))
}

fn check_input(arch: &ArchitectureConfig, x: &Tensor<impl Real>) -> Result<()> {
    if x.c != arch.input_channels || x.h != arch.input_size || x.w != arch.input_size {
        return Err(Error::Shape(format!(
            "expected {s}x{s}x{c} samples, got {}x{}x{}",
            x.h,
            x.w,
            x.c,
            s = arch.input_size,
            c = arch.input_channels
        )));
    }
    if x.n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

impl<F: Real> Generator<F> {
    pub fn reconstruct(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.arch, x)?;
        Ok(self.decoder.forward(self.encoder.forward(x.clone())))
    }

    /// Reconstruction with batch normalization statistics taken from `x`
    /// itself, as during training.
    pub fn reconstruct_train(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.arch, x)?;
        Ok(self
            .decoder
            .forward_mode(self.encoder.forward_mode(x.clone(), Mode::Train), Mode::Train))
    }

    /// Latent codes, `latent_dim x N`.
    pub fn encode(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.arch, x)?;
        Ok(self.encoder.forward(x.clone()))
    }

    pub(crate) fn forward_traced(&self, x: Tensor<F>) -> (Tensor<F>, Trace<F>, Trace<F>) {
        let (z, te) = self.encoder.forward_traced(x);
        let (y, td) = self.decoder.forward_traced(z);
        (y, te, td)
    }

    /// Parameter gradients for `dy` at the output; returns `(grads, d_input)`.
    pub(crate) fn backward(&self, te: &Trace<F>, td: &Trace<F>, dy: Tensor<F>, grads: &mut [Vec<F>]) -> Tensor<F> {
        let n_enc = self.encoder.params().len();
        let (ge, gd) = grads.split_at_mut(n_enc);
        let dz = self.decoder.backward(td, dy, Some(gd));
        self.encoder.backward(te, dz, Some(ge))
    }

    pub fn zero_grads(&self) -> Vec<Vec<F>> {
        let mut g = self.encoder.zero_grads();
        g.extend(self.decoder.zero_grads());
        g
    }

    pub fn param_count(&self) -> usize {
        self.encoder
            .params()
            .iter()
            .chain(self.decoder.params().iter())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> Generator<G> {
        Generator {
            arch: self.arch.clone(),
            seed: self.seed,
            encoder: cast_net(&self.encoder),
            decoder: cast_net(&self.decoder),
        }
    }
}

impl<F: Real> Discriminator<F> {
    /// Raw logits, one per sample.
    pub fn logits(&self, x: &Tensor<F>) -> Result<Vec<F>> {
        check_input(&self.arch, x)?;
        Ok(self.net.forward(x.clone()).data)
    }

    /// Logits with batch normalization statistics taken from `x`, as during
    /// training.
    pub fn logits_train(&self, x: &Tensor<F>) -> Result<Vec<F>> {
        check_input(&self.arch, x)?;
        Ok(self.net.forward_mode(x.clone(), Mode::Train).data)
    }

    pub fn probabilities(&self, x: &Tensor<F>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(|z| logistic(z.as_f64())).collect())
    }

    pub fn cast<G: Real>(&self) -> Discriminator<G> {
        Discriminator {
            arch: self.arch.clone(),
            net: cast_net(&self.net),
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    let z = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
    1.0 / (1.0 + (-z).exp())
}

fn cast_net<F: Real, G: Real>(net: &Sequential<F>) -> Sequential<G> {
    let layers = net
        .layers
        .iter()
        .map(|l| {
            let cast = |p: &crate::nn::Param<F>| crate::nn::Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                value: p.value.iter().map(|x| G::of(x.as_f64())).collect(),
            };
            match l {
                Layer::Conv { weight, bias, geom } => Layer::Conv {
                    weight: cast(weight),
                    bias: cast(bias),
                    geom: *geom,
                },
                Layer::Deconv { weight, bias, geom } => Layer::Deconv {
                    weight: cast(weight),
                    bias: cast(bias),
                    geom: *geom,
                },
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: cast(weight),
                    bias: cast(bias),
                },
                Layer::Flatten => Layer::Flatten,
                Layer::Unflatten { c, h, w } => Layer::Unflatten { c: *c, h: *h, w: *w },
                Layer::Act(a) => Layer::Act(*a),
                Layer::Norm(bn) => Layer::Norm(crate::nn::BatchNorm {
                    gamma: cast(&bn.gamma),
                    beta: cast(&bn.beta),
                    running_mean: cast(&bn.running_mean),
                    running_var: cast(&bn.running_var),
                    momentum: bn.momentum,
                    eps: bn.eps,
                }),
            }
        })
        .collect();
    Sequential::new(layers)
}

/// Reconstruct a patch batch. Output has the input's `N x H x W x C` shape with
/// values in `[-1, 1]`.
pub fn generator_forward<F: Real>(g: &Generator<F>, batch: &PatchBatch) -> Result<Array4<f32>> {
    let x = Tensor::<F>::from_nhwc(&batch.patches);
    Ok(g.reconstruct(&x)?.to_nhwc())
}

/// Probability that each sample is real, strictly inside (0, 1).
pub fn discriminator_forward<F: Real>(d: &Discriminator<F>, batch: &PatchBatch) -> Result<Vec<f64>> {
    d.probabilities(&Tensor::<F>::from_nhwc(&batch.patches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowprep::PatchOrigin;
    use rand::Rng;

    fn random_batch(n: usize, size: usize, seed: u64) -> PatchBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patches = Array4::from_shape_fn((n, size, size, 3), |_| rng.random_range(-1.0f32..=1.0));
        let provenance = (0..n)
            .map(|i| PatchOrigin {
                frame_idx: i,
                row: 0,
                col: 0,
            })
            .collect();
        PatchBatch::new(patches, provenance).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = ArchitectureConfig::miniature();
        let (g1, d1) = init_models::<f32>(&arch, 1).unwrap();
        let (g1b, d1b) = init_models::<f32>(&arch, 1).unwrap();
        let (g2, _) = init_models::<f32>(&arch, 2).unwrap();
        assert_eq!(g1, g1b);
        assert_eq!(d1, d1b);
        assert_ne!(g1.encoder, g2.encoder);
    }

    #[test]
    fn init_statistics() {
        let (g, _) = init_models::<f64>(&ArchitectureConfig::default(), 5).unwrap();
        let w: Vec<f64> = g
            .encoder
            .params()
            .iter()
            .filter(|p| p.name.ends_with("weight"))
            .flat_map(|p| p.value.clone())
            .collect();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - 0.02).abs() < 5e-4);
        assert!(g
            .encoder
            .params()
            .iter()
            .filter(|p| p.name.ends_with("bias"))
            .all(|p| p.value.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn latent_zero_is_rejected() {
        let mut arch = ArchitectureConfig::miniature();
        arch.latent_dim = 0;
        assert!(matches!(init_models::<f32>(&arch, 0), Err(Error::Config(_))));
    }

    #[test]
    fn generator_shape_and_bound() {
        let (g, _) = init_models::<f32>(&ArchitectureConfig::default(), 3).unwrap();
        let b = random_batch(4, 32, 9);
        let y = generator_forward(&g, &b).unwrap();
        assert_eq!(y.dim(), (4, 32, 32, 3));
        assert!(y.iter().all(|v| v.abs() <= 1.0));
        let err: f32 = (&y - &b.patches).mapv(f32::abs).mean().unwrap();
        assert!(err > 0.0);
    }

    #[test]
    fn generator_bound_holds_for_large_weights() {
        let (mut g, _) = init_models::<f32>(&ArchitectureConfig::miniature(), 3).unwrap();
        for p in g.decoder.params_mut() {
            p.value.iter_mut().for_each(|w| *w *= 500.0);
        }
        let y = generator_forward(&g, &random_batch(3, 8, 1)).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn discriminator_range_and_purity() {
        let (_, d) = init_models::<f32>(&ArchitectureConfig::miniature(), 4).unwrap();
        let mut b = random_batch(5, 8, 2);
        let row = b.patches.index_axis(ndarray::Axis(0), 0).to_owned();
        b.patches.index_axis_mut(ndarray::Axis(0), 3).assign(&row);
        let p = discriminator_forward(&d, &b).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(p[0], p[3]);
    }

    #[test]
    fn discriminator_saturation_stays_open_interval() {
        let (_, mut d) = init_models::<f32>(&ArchitectureConfig::miniature(), 4).unwrap();
        for p in d.net.params_mut() {
            p.value.iter_mut().for_each(|w| *w *= 1e4);
        }
        let p = discriminator_forward(&d, &random_batch(6, 8, 3)).unwrap();
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (g, d) = init_models::<f32>(&ArchitectureConfig::default(), 3).unwrap();
        let b = random_batch(2, 8, 1);
        assert!(matches!(generator_forward(&g, &b), Err(Error::Shape(_))));
        assert!(matches!(discriminator_forward(&d, &b), Err(Error::Shape(_))));
    }
}
