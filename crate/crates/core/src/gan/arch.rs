use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ConvGeom;

/// Layer layout shared by the generator and the discriminator.
///
/// Every stage is a 4x4, stride-2 convolution halving the spatial size. The
/// decoder mirrors the encoder with transposed convolutions; the discriminator
/// reuses the encoder stages and ends in a single logistic unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub encoder_filters: Vec<usize>,
    pub latent_dim: usize,
    pub discriminator_filters: Vec<usize>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            input_channels: 3,
            encoder_filters: vec![64, 128, 256],
            latent_dim: 100,
            discriminator_filters: vec![64, 128, 256],
        }
    }
}

pub(crate) const STAGE: ConvGeom = ConvGeom {
    kernel: 4,
    stride: 2,
    pad: 1,
};

impl ArchitectureConfig {
    /// Narrow layout with a small bottleneck that trains in minutes on one CPU
    /// core.
    pub fn desk() -> Self {
        Self {
            encoder_filters: vec![16, 32, 64],
            latent_dim: 16,
            discriminator_filters: vec![16, 32, 64],
            ..Self::default()
        }
    }

    /// Small network for tests: 8x8 input, two stages.
    pub fn miniature() -> Self {
        Self {
            input_size: 8,
            input_channels: 3,
            encoder_filters: vec![4, 6],
            latent_dim: 5,
            discriminator_filters: vec![4, 6],
        }
    }

    /// Spatial side after the encoder stages.
    pub fn bottleneck_size(&self) -> usize {
        self.encoder_filters
            .iter()
            .fold(self.input_size, |s, _| STAGE.conv_out(s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::Config("input size and channels must be positive".into()));
        }
        if self.encoder_filters.is_empty() || self.discriminator_filters.is_empty() {
            return Err(Error::Config("at least one conv stage is required".into()));
        }
        if self
            .encoder_filters
            .iter()
            .chain(&self.discriminator_filters)
            .any(|&f| f == 0)
        {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        for filters in [&self.encoder_filters, &self.discriminator_filters] {
            let mut s = self.input_size;
            for _ in filters {
                if s < 2 || !s.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "input size {} cannot be halved {} times",
                        self.input_size,
                        filters.len()
                    )));
                }
                s = STAGE.conv_out(s);
            }
        }
        let decoded = self
            .encoder_filters
            .iter()
            .fold(self.bottleneck_size(), |s, _| STAGE.deconv_out(s));
        if decoded != self.input_size {
            return Err(Error::Config(format!(
                "decoder output {decoded} does not match input size {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let a = ArchitectureConfig::default();
        a.validate().unwrap();
        assert_eq!(a.bottleneck_size(), 4);
        ArchitectureConfig::miniature().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_layouts() {
        let bad = [
            ArchitectureConfig {
                latent_dim: 0,
                ..Default::default()
            },
            ArchitectureConfig {
                input_size: 30,
                ..Default::default()
            },
            ArchitectureConfig {
                encoder_filters: vec![8; 6],
                ..Default::default()
            },
        ];
        for a in bad {
            assert!(matches!(a.validate(), Err(Error::Config(_))));
        }
    }
}
