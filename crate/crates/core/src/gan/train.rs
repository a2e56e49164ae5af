use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::ArchitectureConfig;
use super::loss::{AdversarialForm, LossWeights};
use super::model::{init_models, Discriminator, Generator};
use crate::error::{Error, Result};
use crate::flowprep::PatchBatch;
use crate::nn::{Mode, NormStats, Optimizer, OptimizerKind, Real, Tensor};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub architecture: ArchitectureConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub loss_weights: LossWeights,
    pub adversarial_form: AdversarialForm,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            architecture: ArchitectureConfig::default(),
            learning_rate: 0.02,
            epochs: 40,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::default(),
            loss_weights: LossWeights::default(),
            adversarial_form: AdversarialForm::default(),
        }
    }
}

impl TrainingConfig {
    /// Desk-scale settings for the image benchmark: [`ArchitectureConfig::desk`]
    /// with a lower learning rate and fewer epochs.
    pub fn desk() -> Self {
        Self {
            architecture: ArchitectureConfig::desk(),
            learning_rate: 0.0005,
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.loss_weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        match self.optimizer {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")))
            }
            OptimizerKind::Adam { beta1, beta2 } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) => {
                Err(Error::Config("adam betas must be in [0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Whether the discriminator takes part at all.
    pub fn adversarial(&self) -> bool {
        self.loss_weights.w_a > 0.0
    }
}

/// Per-epoch loss curves. With `w_a = 0` the discriminator is not trained and
/// the adversarial columns are empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub recon_loss: Vec<f64>,
    pub g_adv_loss: Vec<Option<f64>>,
    pub d_loss: Vec<Option<f64>>,
    /// Mean reconstruction loss of held-out probe sets, keyed by probe name.
    pub monitors: BTreeMap<String, Vec<f64>>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.recon_loss.len()
    }

    /// CSV with header `epoch,recon_loss,g_adv_loss,d_loss`, epochs numbered from 1.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "recon_loss", "g_adv_loss", "d_loss"])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.9}")).unwrap_or_default();
        for e in 0..self.epochs() {
            w.write_record([
                (e + 1).to_string(),
                format!("{:.9}", self.recon_loss[e]),
                opt(self.g_adv_loss[e]),
                opt(self.d_loss[e]),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Scalar losses and parameter gradients of one objective evaluation, with the
/// batch normalization statistics of each training-mode pass that produced them.
#[derive(Debug, Clone)]
pub struct Objective<F> {
    pub total: f64,
    pub recon: f64,
    pub adv: f64,
    pub grads: Vec<Vec<F>>,
    pub norm_stats: Vec<NormStats<F>>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generator objective `w_i * mean|x - G(x)| + w_a * adv` and its gradient with
/// respect to every generator parameter, where `adv` is `-mean log D(G(x))` or,
/// for the min-max form, `mean log(1 - D(G(x)))`. Both networks run in
/// training mode.
pub fn generator_objective<F: Real>(
    g: &Generator<F>,
    d: &Discriminator<F>,
    x: &Tensor<F>,
    w: LossWeights,
    form: AdversarialForm,
) -> Objective<F> {
    let (y, te, td) = g.forward_traced(x.clone());
    let numel = y.len() as f64;
    let mut recon = 0.0;
    let mut dy = Tensor::zeros(y.c, y.n, y.h, y.w);
    let scale = F::of(w.w_i / numel);
    for ((d, &a), &b) in dy.data.iter_mut().zip(&y.data).zip(&x.data) {
        let diff = (a - b).as_f64();
        recon += diff.abs();
        *d = if diff > 0.0 {
            scale
        } else if diff < 0.0 {
            -scale
        } else {
            F::zero()
        };
    }
    recon /= numel;

    let mut adv = 0.0;
    if w.w_a > 0.0 {
        let (logits, tr) = d.net.forward_traced(y.clone());
        let n = logits.len() as f64;
        let mut dz = Tensor::zeros(logits.c, logits.n, 1, 1);
        for (g, &z) in dz.data.iter_mut().zip(&logits.data) {
            let z = z.as_f64();
            match form {
                AdversarialForm::NonSaturating => {
                    adv += softplus(-z);
                    *g = F::of(w.w_a * (sigmoid(z) - 1.0) / n);
                }
                AdversarialForm::MinMax => {
                    adv -= softplus(z);
                    *g = F::of(-w.w_a * sigmoid(z) / n);
                }
            }
        }
        adv /= n;
        let dy_adv = d.net.backward(&tr, dz, None);
        for (a, b) in dy.data.iter_mut().zip(&dy_adv.data) {
            *a = *a + *b;
        }
    }
    let mut grads = g.zero_grads();
    let norm_stats = vec![te.norm_stats(), td.norm_stats()];
    g.backward(&te, &td, dy, &mut grads);
    Objective {
        total: w.w_i * recon + w.w_a * adv,
        recon,
        adv,
        grads,
        norm_stats,
    }
}

/// Discriminator loss `-mean log D(x) - mean log(1 - D(G(x)))` and its gradient
/// with respect to every discriminator parameter. Real and reconstructed
/// samples pass through the discriminator as separate training-mode batches.
pub fn discriminator_objective<F: Real>(g: &Generator<F>, d: &Discriminator<F>, x: &Tensor<F>) -> Objective<F> {
    let fake = g
        .decoder
        .forward_mode(g.encoder.forward_mode(x.clone(), Mode::Train), Mode::Train);
    let mut grads = d.net.zero_grads();
    let mut total = 0.0;
    let mut norm_stats = Vec::with_capacity(2);
    for (input, real) in [(x.clone(), true), (fake, false)] {
        let (logits, tr) = d.net.forward_traced(input);
        let n = logits.len() as f64;
        let mut dz = Tensor::zeros(logits.c, logits.n, 1, 1);
        let mut part = 0.0;
        for (g, &z) in dz.data.iter_mut().zip(&logits.data) {
            let z = z.as_f64();
            if real {
                part += softplus(-z);
                *g = F::of((sigmoid(z) - 1.0) / n);
            } else {
                part += softplus(z);
                *g = F::of(sigmoid(z) / n);
            }
        }
        total += part / n;
        norm_stats.push(tr.norm_stats());
        d.net.backward(&tr, dz, Some(&mut grads));
    }
    Objective {
        total,
        recon: 0.0,
        adv: 0.0,
        grads,
        norm_stats,
    }
}

/// Train on normal-class patches only. See [`train_with_monitor`].
///
/// The training interface takes unlabeled patch batches; labeled collections
/// cannot be passed:
///
/// ```compile_fail
/// use livegan::gan::{train, TrainingConfig};
/// use livegan::scoring::LabeledScore;
/// let labeled: Vec<LabeledScore> = Vec::new();
/// let _ = train(&labeled, &TrainingConfig::default());
/// ```
pub fn train(
    patches: &PatchBatch,
    cfg: &TrainingConfig,
) -> Result<(Generator<f32>, Discriminator<f32>, TrainingHistory)> {
    train_with_monitor(patches, cfg, &[])
}

/// Alternating adversarial training: per mini-batch, one discriminator step
/// then one generator step on the weighted reconstruction + adversarial loss.
/// Mini-batch order is drawn from `cfg.seed`, so runs are bit-reproducible.
/// After every epoch the mean reconstruction loss of each monitor batch is
/// recorded.
pub fn train_with_monitor(
    patches: &PatchBatch,
    cfg: &TrainingConfig,
    monitors: &[(&str, &PatchBatch)],
) -> Result<(Generator<f32>, Discriminator<f32>, TrainingHistory)> {
    train_with_callback(patches, cfg, monitors, &mut |_, _, _, _| Ok(()))
}

/// Callback run after every completed epoch with the epoch number (from 1),
/// both networks and the history so far.
pub type EpochCallback<'a> =
    dyn FnMut(usize, &Generator<f32>, &Discriminator<f32>, &TrainingHistory) -> Result<()> + 'a;

/// [`train_with_monitor`] plus a per-epoch callback, e.g. for checkpointing.
/// An error from the callback stops training and is returned.
pub fn train_with_callback(
    patches: &PatchBatch,
    cfg: &TrainingConfig,
    monitors: &[(&str, &PatchBatch)],
    on_epoch: &mut EpochCallback<'_>,
) -> Result<(Generator<f32>, Discriminator<f32>, TrainingHistory)> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::Data("no training patches".into()));
    }
    let data = Tensor::<f32>::from_nhwc(&patches.patches);
    let (mut g, mut d) = init_models::<f32>(&cfg.architecture, cfg.seed)?;
    if data.c != cfg.architecture.input_channels || data.h != cfg.architecture.input_size {
        return Err(Error::Shape(format!(
            "patches are {}x{}x{}, architecture expects {s}x{s}x{}",
            data.h,
            data.w,
            data.c,
            cfg.architecture.input_channels,
            s = cfg.architecture.input_size
        )));
    }
    let monitor_data: Vec<(String, Tensor<f32>)> = monitors
        .iter()
        .map(|(name, b)| (name.to_string(), Tensor::from_nhwc(&b.patches)))
        .collect();

    let mut opt_g = {
        // Generator parameters are split across encoder and decoder; the optimizer
        // sees them through a combined view.
        GenOptimizer::new(cfg, &g)
    };
    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.learning_rate, &d.net);
    let mut order: Vec<usize> = (0..data.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut history = TrainingHistory::default();
    for (name, _) in &monitor_data {
        history.monitors.insert(name.clone(), Vec::new());
    }

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_rec, mut sum_adv, mut sum_d, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.select(idx);
            if cfg.adversarial() {
                let od = discriminator_objective(&g, &d, &x);
                if !od.total.is_finite() {
                    return Err(divergence(epoch, bi + 1, "discriminator loss", od.total));
                }
                opt_d.step(&mut d.net, &od.grads);
                for stats in &od.norm_stats {
                    d.net.update_running_stats(stats);
                }
                sum_d += od.total;
            }
            let og = generator_objective(&g, &d, &x, cfg.loss_weights, cfg.adversarial_form);
            if !og.total.is_finite() {
                return Err(divergence(epoch, bi + 1, "generator loss", og.total));
            }
            opt_g.step(&mut g, &og.grads);
            g.encoder.update_running_stats(&og.norm_stats[0]);
            g.decoder.update_running_stats(&og.norm_stats[1]);
            sum_rec += og.recon;
            sum_adv += og.adv;
            batches += 1;
        }
        let nb = batches as f64;
        history.recon_loss.push(sum_rec / nb);
        if cfg.adversarial() {
            history.g_adv_loss.push(Some(sum_adv / nb));
            history.d_loss.push(Some(sum_d / nb));
        } else {
            history.g_adv_loss.push(None);
            history.d_loss.push(None);
        }
        for (name, t) in &monitor_data {
            let loss = mean_recon(&g, t, cfg.batch_size.max(256))?;
            history.monitors.get_mut(name).unwrap().push(loss);
        }
        log::debug!(
            "epoch {epoch}: recon {:.5} g_adv {:?} d {:?}",
            history.recon_loss[epoch - 1],
            history.g_adv_loss[epoch - 1],
            history.d_loss[epoch - 1]
        );
        on_epoch(epoch, &g, &d, &history)?;
    }
    Ok((g, d, history))
}

fn divergence(epoch: usize, batch: usize, what: &str, value: f64) -> Error {
    Error::Divergence {
        epoch,
        batch,
        detail: format!("{what} became {value}"),
    }
}

fn mean_recon(g: &Generator<f32>, t: &Tensor<f32>, chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..t.n).collect();
    for part in idx.chunks(chunk) {
        let x = t.select(part);
        let y = g.reconstruct(&x)?;
        total += x
            .data
            .iter()
            .zip(&y.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>();
    }
    Ok(total / t.len() as f64)
}

/// Optimizer over the generator's encoder and decoder parameters.
struct GenOptimizer {
    enc: Optimizer<f32>,
    dec: Optimizer<f32>,
    n_enc: usize,
}

impl GenOptimizer {
    fn new(cfg: &TrainingConfig, g: &Generator<f32>) -> Self {
        Self {
            enc: Optimizer::new(cfg.optimizer, cfg.learning_rate, &g.encoder),
            dec: Optimizer::new(cfg.optimizer, cfg.learning_rate, &g.decoder),
            n_enc: g.encoder.params().len(),
        }
    }

    fn step(&mut self, g: &mut Generator<f32>, grads: &[Vec<f32>]) {
        let (ge, gd) = grads.split_at(self.n_enc);
        self.enc.step(&mut g.encoder, ge);
        self.dec.step(&mut g.decoder, gd);
    }
}
