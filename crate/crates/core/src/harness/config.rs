use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::TextureKind;
use crate::error::{Error, Result};
use crate::models::{AdamConfig, Bottleneck, CriticSpec, Downsample, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Reconstruction loss only.
    Ae,
    /// Scalar-head adversarial loss, source and target domain identical.
    Adv,
    /// Paired vector-head adversarial loss, source and target identical.
    AdvPaired,
    /// Scalar-head adversarial translation between two domains.
    I2i,
}

impl Mode {
    pub fn is_adversarial(self) -> bool {
        self != Mode::Ae
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ae => "ae",
            Mode::Adv => "adv",
            Mode::AdvPaired => "adv-paired",
            Mode::I2i => "i2i",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(Mode::Ae),
            "adv" => Ok(Mode::Adv),
            "adv-paired" => Ok(Mode::AdvPaired),
            "i2i" => Ok(Mode::I2i),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected ae, adv, adv-paired or i2i)"))),
        }
    }
}

/// Everything a training run depends on. Every field has a default except
/// `mode`; two runs with equal configs produce bit-identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,

    /// Master seed; model initialisation, batching and noise derive from it.
    #[serde(default)]
    pub seed: u64,
    /// Seed of the synthetic datasets; defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,

    /// Texture of the shape-source domain (synthetic data).
    #[serde(default = "defaults::source_texture")]
    pub source_texture: TextureKind,
    /// Texture of the texture-target domain; must equal `source_texture`
    /// outside `i2i` mode.
    #[serde(default = "defaults::source_texture")]
    pub target_texture: TextureKind,
    /// Images per synthetic domain.
    #[serde(default = "defaults::dataset_size")]
    pub dataset_size: usize,
    /// Load the source domain from a directory written by `gen-data`
    /// instead of synthesising it.
    #[serde(default)]
    pub source_dir: Option<PathBuf>,
    #[serde(default)]
    pub target_dir: Option<PathBuf>,

    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    #[serde(default = "defaults::channels")]
    pub channels: usize,
    #[serde(default = "defaults::bottleneck")]
    pub bottleneck: Bottleneck,
    #[serde(default = "defaults::noise_dim")]
    pub noise_dim: usize,
    #[serde(default = "defaults::gen_base_width")]
    pub gen_base_width: usize,
    #[serde(default = "defaults::max_width")]
    pub gen_max_width: usize,
    #[serde(default)]
    pub downsample: Downsample,
    #[serde(default = "defaults::critic_base_width")]
    pub critic_base_width: usize,
    #[serde(default = "defaults::max_width")]
    pub critic_max_width: usize,
    #[serde(default = "defaults::critic_levels")]
    pub critic_levels: usize,
    /// Dimension of the critic's vector head.
    #[serde(default = "defaults::vector_dim")]
    pub vector_dim: usize,
    #[serde(default = "defaults::leaky_slope")]
    pub leaky_slope: f64,

    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Critic learning rate; defaults to `lr`.
    #[serde(default)]
    pub critic_lr: Option<f64>,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    /// Critic steps per generator step.
    #[serde(default = "defaults::n_critic")]
    pub n_critic: usize,
    /// Critic weight clipping bound.
    #[serde(default = "defaults::clip")]
    pub clip: f64,
    #[serde(default = "defaults::yes")]
    pub clip_enabled: bool,

    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Training budget in image presentations.
    #[serde(default = "defaults::total_images")]
    pub total_images: u64,
    /// Presentations between evaluations.
    #[serde(default = "defaults::eval_every")]
    pub eval_every: u64,
    /// Compute held-out reconstruction at each evaluation. Disabling it
    /// leaves every parameter trajectory unchanged.
    #[serde(default = "defaults::yes")]
    pub track_recon: bool,
    /// Record wall-clock milliseconds in the log (otherwise 0, keeping logs
    /// bit-reproducible).
    #[serde(default)]
    pub log_wall_time: bool,
    /// Images per row of the evaluation grids.
    #[serde(default = "defaults::grid_images")]
    pub grid_images: usize,
    #[serde(default = "defaults::yes")]
    pub write_checkpoints: bool,
}

mod defaults {
    use super::*;

    pub fn source_texture() -> TextureKind {
        TextureKind::HStripes
    }
    pub fn dataset_size() -> usize {
        256
    }
    pub fn image_size() -> usize {
        32
    }
    pub fn channels() -> usize {
        1
    }
    pub fn bottleneck() -> Bottleneck {
        Bottleneck::new(32, 4, 4)
    }
    pub fn noise_dim() -> usize {
        4
    }
    pub fn gen_base_width() -> usize {
        8
    }
    pub fn critic_base_width() -> usize {
        8
    }
    pub fn max_width() -> usize {
        32
    }
    pub fn critic_levels() -> usize {
        3
    }
    pub fn vector_dim() -> usize {
        64
    }
    pub fn leaky_slope() -> f64 {
        0.2
    }
    pub fn lr() -> f64 {
        AdamConfig::default().lr
    }
    pub fn beta1() -> f64 {
        0.0
    }
    pub fn beta2() -> f64 {
        AdamConfig::default().beta2
    }
    pub fn adam_eps() -> f64 {
        AdamConfig::default().eps
    }
    pub fn n_critic() -> usize {
        1
    }
    pub fn clip() -> f64 {
        0.05
    }
    pub fn yes() -> bool {
        true
    }
    pub fn batch_size() -> usize {
        4
    }
    pub fn total_images() -> u64 {
        50_000
    }
    pub fn eval_every() -> u64 {
        1000
    }
    pub fn grid_images() -> usize {
        8
    }
}

impl TrainConfig {
    fn mode_batches_per_step(&self) -> usize {
        if self.mode.is_adversarial() {
            self.n_critic
        } else {
            1
        }
    }

    /// Defaults for every field, with the given mode.
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            mode,
            seed: 0,
            data_seed: None,
            source_texture: defaults::source_texture(),
            target_texture: defaults::source_texture(),
            dataset_size: defaults::dataset_size(),
            source_dir: None,
            target_dir: None,
            image_size: defaults::image_size(),
            channels: defaults::channels(),
            bottleneck: defaults::bottleneck(),
            noise_dim: defaults::noise_dim(),
            gen_base_width: defaults::gen_base_width(),
            gen_max_width: defaults::max_width(),
            downsample: Downsample::default(),
            critic_base_width: defaults::critic_base_width(),
            critic_max_width: defaults::max_width(),
            critic_levels: defaults::critic_levels(),
            vector_dim: defaults::vector_dim(),
            leaky_slope: defaults::leaky_slope(),
            lr: defaults::lr(),
            critic_lr: None,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
            n_critic: defaults::n_critic(),
            clip: defaults::clip(),
            clip_enabled: true,
            batch_size: defaults::batch_size(),
            total_images: defaults::total_images(),
            eval_every: defaults::eval_every(),
            track_recon: true,
            log_wall_time: false,
            grid_images: defaults::grid_images(),
            write_checkpoints: true,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            channels: self.channels,
            image_size: self.image_size,
            bottleneck: self.bottleneck,
            noise_dim: self.noise_dim,
            base_width: self.gen_base_width,
            max_width: self.gen_max_width,
            downsample: self.downsample,
        }
    }

    pub fn critic_spec(&self) -> CriticSpec {
        CriticSpec {
            channels: self.channels,
            image_size: self.image_size,
            base_width: self.critic_base_width,
            max_width: self.critic_max_width,
            levels: self.critic_levels,
            vector_dim: self.vector_dim,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn generator_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn critic_adam(&self) -> AdamConfig {
        AdamConfig { lr: self.critic_lr.unwrap_or(self.lr), ..self.generator_adam() }
    }

    /// Checks mode/dataset consistency and the numeric ranges.
    pub fn validate(&self) -> Result<()> {
        let same_domain = self.source_texture == self.target_texture && self.source_dir == self.target_dir;
        match self.mode {
            Mode::I2i if same_domain => {
                return Err(Error::Config(
                    "i2i needs differing source and target domains; for identical domains use mode adv".into(),
                ))
            }
            Mode::Ae | Mode::Adv | Mode::AdvPaired if !same_domain => {
                return Err(Error::Config(format!(
                    "mode {} requires identical source and target domains",
                    self.mode.as_str()
                )))
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        // Rows must land exactly on evaluation boundaries, so every boundary
        // has to be reachable by whole steps.
        let step = (self.batch_size * self.mode_batches_per_step()) as u64;
        if self.eval_every == 0 || !self.eval_every.is_multiple_of(step) {
            return Err(Error::Config(format!(
                "eval_every ({}) must be a positive multiple of the {step} images consumed per step",
                self.eval_every
            )));
        }
        if self.total_images == 0 {
            return Err(Error::Config("total_images must be positive".into()));
        }
        if self.clip_enabled && (self.clip.is_nan() || self.clip <= 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        let positive = [("lr", self.lr), ("critic_lr", self.critic_lr.unwrap_or(self.lr))];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive and finite")));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.source_dir.is_none() && self.dataset_size < 2 {
            return Err(Error::Config("dataset_size must be at least 2 (one held out)".into()));
        }
        self.generator_spec().validate()?;
        if self.mode.is_adversarial() {
            self.critic_spec().param_layout()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_domain_consistency() {
        let mut c = TrainConfig::new(Mode::I2i);
        assert!(c.validate().unwrap_err().to_string().contains("use mode adv"));
        c.target_texture = TextureKind::Dots;
        c.validate().unwrap();
        c.mode = Mode::Ae;
        assert!(c.validate().is_err());
    }

    #[test]
    fn eval_every_must_be_a_whole_number_of_steps() {
        let mut c = TrainConfig::new(Mode::Ae);
        c.eval_every = 6;
        assert!(c.validate().is_err());
        c.eval_every = 1010;
        assert!(c.validate().is_err());
        c.eval_every = 1000;
        c.validate().unwrap();

        let mut c = TrainConfig::new(Mode::Adv);
        c.n_critic = 3;
        assert!(c.validate().is_err());
        c.eval_every = 1200;
        c.validate().unwrap();
    }
}
