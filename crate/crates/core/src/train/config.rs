use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranker::{ArchConfig, Variant};

/// Hyperparameters of a ranking run. Unknown JSON fields are rejected so
/// typos in config files surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub image_size: usize,
    pub in_channels: usize,
    pub feature_dim: usize,
    pub category_dim: usize,
    /// Maximum number of training pairs sampled from the manifest.
    pub pair_budget: usize,
    /// Fraction of the sampled pairs held out for per-epoch metrics.
    pub heldout_fraction: f64,
    pub roi_size: usize,
    pub extractor_channels: [usize; 3],
    pub loc_channels: [usize; 2],
    pub loc_hidden: usize,
    pub loc_input_size: usize,
    pub base_scale: f64,
    /// Area kept by the per-level random crop; 1 disables cropping.
    pub crop_fraction: f64,
    /// Multiplier on the learning rate of the localization networks.
    pub stn_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        TrainConfig {
            variant: arch.variant,
            learning_rate: 0.03,
            momentum: 0.9,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            image_size: arch.image_size,
            in_channels: arch.in_channels,
            feature_dim: arch.feature_dim,
            category_dim: arch.category_dim,
            pair_budget: 20_000,
            heldout_fraction: 0.05,
            roi_size: arch.roi_size,
            extractor_channels: arch.extractor_channels,
            loc_channels: arch.loc_channels,
            loc_hidden: arch.loc_hidden,
            loc_input_size: arch.loc_input_size,
            base_scale: arch.base_scale,
            crop_fraction: 0.9,
            stn_lr_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            variant: self.variant,
            image_size: self.image_size,
            in_channels: self.in_channels,
            roi_size: self.roi_size,
            feature_dim: self.feature_dim,
            extractor_channels: self.extractor_channels,
            loc_channels: self.loc_channels,
            loc_hidden: self.loc_hidden,
            loc_input_size: self.loc_input_size,
            base_scale: self.base_scale,
            category_dim: self.category_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return cfg(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return cfg(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("pair_budget", self.pair_budget),
        ] {
            if v == 0 {
                return cfg(format!("{name} must be positive"));
            }
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return cfg(format!("heldout_fraction must lie in (0, 1), got {}", self.heldout_fraction));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return cfg(format!("crop_fraction must lie in (0, 1], got {}", self.crop_fraction));
        }
        if !(self.stn_lr_scale >= 0.0 && self.stn_lr_scale.is_finite()) {
            return cfg(format!("stn_lr_scale must be non-negative, got {}", self.stn_lr_scale));
        }
        self.arch().validate()
    }
}

/// Hyperparameters of the category classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryConfig {
    pub category_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CategoryConfig {
    fn default() -> Self {
        CategoryConfig {
            category_dim: ArchConfig::default().category_dim,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl CategoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.category_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("category_dim, epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("invalid learning rate or momentum".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        CategoryConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        for c in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { image_size: 50, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_)) | Err(Error::Dimension { .. })), "{c:?}");
        }
        let err = serde_json::from_str::<TrainConfig>("{\"lerning_rate\": 0.1}").unwrap_err();
        assert!(err.to_string().contains("lerning_rate"));
    }

    #[test]
    fn variant_strings() {
        let c: TrainConfig = serde_json::from_str("{\"variant\": \"mc\", \"epochs\": 3}").unwrap();
        assert_eq!(c.variant, Variant::Mc);
        assert_eq!(c.epochs, 3);
    }
}
