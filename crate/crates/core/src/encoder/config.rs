use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a flat ViT encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub channels_in: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// FFN hidden width; `4 * embed_dim` unless set explicitly.
    #[serde(default)]
    pub ffn_hidden: Option<usize>,
    pub num_classes: usize,
}

impl EncoderConfig {
    /// Tiny config with `ffn_hidden = 4 * embed_dim`.
    pub fn new(
        image_side: usize,
        patch_side: usize,
        channels_in: usize,
        embed_dim: usize,
        heads: usize,
        depth: usize,
        num_classes: usize,
    ) -> Self {
        EncoderConfig {
            image_side,
            patch_side,
            channels_in,
            embed_dim,
            heads,
            depth,
            ffn_hidden: None,
            num_classes,
        }
    }

    /// DeiT-Tiny geometry: 224px, 16px patches, 196 patches, C = 192, 3 heads, 12 layers.
    pub fn deit_tiny(num_classes: usize) -> Self {
        EncoderConfig::new(224, 16, 3, 192, 3, 12, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.patch_side == 0 || self.channels_in == 0 {
            return Err(Error::Config("image_side, patch_side and channels_in must be positive".into()));
        }
        if !self.image_side.is_multiple_of(self.patch_side) {
            return Err(Error::Config(format!(
                "image_side {} not divisible by patch_side {}",
                self.image_side, self.patch_side
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.ffn_hidden == Some(0) {
            return Err(Error::Config("ffn_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn n_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * self.channels_in
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.embed_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_sizes() {
        let c = EncoderConfig::deit_tiny(1000);
        c.validate().unwrap();
        assert_eq!(c.n_patches(), 196);
        assert_eq!(c.patch_dim(), 768);
        assert_eq!(c.head_dim(), 64);
        assert_eq!(c.hidden(), 768);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(EncoderConfig::new(3, 2, 1, 8, 2, 1, 2).validate().is_err());
        assert!(EncoderConfig::new(4, 2, 1, 9, 2, 1, 2).validate().is_err());
    }
}
