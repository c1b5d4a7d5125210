//! Architecture, loss and run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::ScanStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpsamplerKind {
    #[default]
    Bilinear,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub embed_dim: usize,
    pub patch_size: usize,
    pub num_layers: usize,
    pub state_dim: usize,
    pub scan: ScanStrategy,
    pub num_paths: usize,
    /// One SSM parameter set for all paths of a layer instead of one each.
    pub share_path_params: bool,
    /// Bottleneck rank is `max(1, channels / rank_divisor)`.
    pub rank_divisor: usize,
    pub gbc_kernel: usize,
    pub norm_groups: usize,
    pub stem_gbc: bool,
    pub block_gbc: bool,
    pub upsampler: UpsamplerKind,
    /// Training resolution; fixes the size of the position table.
    pub image_height: usize,
    pub image_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            embed_dim: 16,
            patch_size: 8,
            num_layers: 4,
            state_dim: 8,
            scan: ScanStrategy::Sass,
            num_paths: 4,
            share_path_params: false,
            rank_divisor: 4,
            gbc_kernel: 3,
            norm_groups: 4,
            stem_gbc: true,
            block_gbc: true,
            upsampler: UpsamplerKind::Bilinear,
            image_height: 64,
            image_width: 64,
        }
    }
}

impl NetworkConfig {
    /// Small configuration used by the gradient and transcription checks.
    pub fn micro() -> Self {
        NetworkConfig {
            embed_dim: 8,
            patch_size: 8,
            state_dim: 4,
            image_height: 32,
            image_width: 32,
            ..Self::default()
        }
    }

    pub fn rank(&self, channels: usize) -> usize {
        (channels / self.rank_divisor.max(1)).max(1)
    }

    pub fn groups(&self, channels: usize) -> usize {
        crate::gbc::norm_groups(channels, self.norm_groups)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.state_dim == 0 {
            return err("embed_dim and state_dim must be positive".into());
        }
        if self.patch_size == 0 {
            return err("patch_size must be positive".into());
        }
        if self.num_layers == 0 {
            return err("num_layers must be at least 1".into());
        }
        if self.num_paths != 2 && self.num_paths != 4 {
            return err(format!("num_paths must be 2 or 4, got {}", self.num_paths));
        }
        if self.rank_divisor == 0 {
            return err("rank_divisor must be positive".into());
        }
        if self.gbc_kernel % 2 == 0 {
            return err(format!("gbc_kernel must be odd, got {}", self.gbc_kernel));
        }
        if self.norm_groups == 0 {
            return err("norm_groups must be positive".into());
        }
        for c in [self.embed_dim, self.embed_dim * self.num_layers] {
            if c % self.groups(c) != 0 {
                return err(format!("{c} channels are not divisible into {} norm groups", self.groups(c)));
            }
        }
        if self.image_height == 0
            || self.image_width == 0
            || self.image_height % self.patch_size != 0
            || self.image_width % self.patch_size != 0
        {
            return err(format!(
                "image size {}x{} must be a positive multiple of patch size {}",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        Ok(())
    }
}

/// Weighted Dice + BCE objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Dice weight.
    pub alpha: f64,
    /// BCE weight.
    pub beta: f64,
    /// Dice smoothing.
    pub eps: f64,
    /// BCE probability clamp.
    pub clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0, beta: 5.0, eps: 1.0, clamp: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || self.alpha + self.beta == 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative and not both zero, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("dice eps must be positive".into()));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::Config("bce clamp must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub poly_power: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Stop once train F1 at threshold 0.5 reaches this value.
    pub stop_at_f1: Option<f64>,
    /// Evaluate train F1 every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            poly_power: 0.9,
            steps: 500,
            batch_size: 8,
            stop_at_f1: None,
            log_every: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive, weight_decay nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size and log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Synthetic crack generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub stroke_count: usize,
    /// Stroke width range in pixels.
    pub width_min: f64,
    pub width_max: f64,
    /// Darkness of cracks relative to the background, in [0, 1].
    pub contrast: f64,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { stroke_count: 2, width_min: 2.0, width_max: 4.0, contrast: 0.6, noise_level: 0.1 }
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub synth: SynthConfig,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            synth: SynthConfig::default(),
            seed: 42,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Micro network on 64x64 synthetic images, full-batch steps at a
    /// raised learning rate, stopping once train F1 reaches 0.95.
    pub fn toy() -> Self {
        RunConfig {
            network: NetworkConfig { image_height: 64, image_width: 64, ..NetworkConfig::micro() },
            optim: OptimConfig { lr: 5e-3, steps: 500, batch_size: 8, stop_at_f1: Some(0.95), ..OptimConfig::default() },
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.optim.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
