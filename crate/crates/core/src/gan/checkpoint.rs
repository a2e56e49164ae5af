use std::path::Path;

use super::arch::ArchitectureConfig;
use super::loss::LossWeights;
use super::model::{init_models, Discriminator, Generator};
use crate::arrays::ArrayFile;
use crate::error::{Error, Result};
use crate::nn::{Param, Real, Sequential};

pub const CHECKPOINT_VERSION: &str = "1";

/// Trained networks plus the record needed to rebuild them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub epoch: usize,
    pub loss_weights: LossWeights,
}

fn push_params<F: Real>(file: &mut ArrayFile, net: &Sequential<F>) {
    for p in net.params().into_iter().chain(net.buffers()) {
        file.arrays
            .push(F::named_array(&p.name, p.shape.clone(), p.value.clone()));
    }
}

fn fill_params<F: Real>(file: &ArrayFile, net: &mut Sequential<F>) -> Result<()> {
    let fill = |p: &mut Param<F>| -> Result<()> {
        let a = file.get(&p.name)?;
        if a.shape != p.shape {
            return Err(Error::Format(format!(
                "{} has shape {:?} in checkpoint, architecture needs {:?}",
                p.name, a.shape, p.shape
            )));
        }
        p.value = F::from_named(a);
        Ok(())
    };
    for p in net.params_mut() {
        fill(p)?;
    }
    for p in net.buffers_mut() {
        fill(p)?;
    }
    Ok(())
}

/// Write a checkpoint: one array per weight plus metadata (architecture, seed,
/// epoch, loss weights, format version).
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut file = ArrayFile::default();
    push_params(&mut file, &ckpt.generator.encoder);
    push_params(&mut file, &ckpt.generator.decoder);
    push_params(&mut file, &ckpt.discriminator.net);
    file.metadata.insert("format_version".into(), CHECKPOINT_VERSION.into());
    file.metadata
        .insert("architecture".into(), to_json(&ckpt.generator.arch)?);
    file.metadata.insert("seed".into(), ckpt.generator.seed.to_string());
    file.metadata.insert("epoch".into(), ckpt.epoch.to_string());
    file.metadata
        .insert("loss_weights".into(), to_json(&ckpt.loss_weights)?);
    file.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = ArrayFile::load(path)?;
    let meta = |key: &str| {
        file.metadata
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks {key:?}")))
    };
    let version = meta("format_version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let arch: ArchitectureConfig =
        serde_json::from_str(meta("architecture")?).map_err(|e| Error::Format(format!("architecture record: {e}")))?;
    let seed: u64 = meta("seed")?
        .parse()
        .map_err(|_| Error::Format("bad seed record".into()))?;
    let epoch: usize = meta("epoch")?
        .parse()
        .map_err(|_| Error::Format("bad epoch record".into()))?;
    let loss_weights: LossWeights =
        serde_json::from_str(meta("loss_weights")?).map_err(|e| Error::Format(format!("loss weight record: {e}")))?;

    let (mut g, mut d) = init_models::<f32>(&arch, seed)?;
    fill_params(&file, &mut g.encoder)?;
    fill_params(&file, &mut g.decoder)?;
    fill_params(&file, &mut d.net)?;
    Ok(Checkpoint {
        generator: g,
        discriminator: d,
        epoch,
        loss_weights,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}
