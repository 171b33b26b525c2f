//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Flags on the CLI override file values. The model hash covers every field
//! that shapes the trained artifact (ingest geometry, augmentation, model
//! architecture, optimization, seed); checkpoints refuse to load under a
//! different model hash.

use crate::error::{config_err, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    /// Worker threads for data-parallel stages; 0 = all cores. Results are
    /// identical for any worker count; 1 additionally pins library thread use.
    pub workers: usize,
    pub ingest: IngestConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub eval: EvalConfig,
    pub finetune: FinetuneConfig,
    pub subtype: SubtypeConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            ingest: IngestConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
            hyper: HyperParams::default(),
            eval: EvalConfig::default(),
            finetune: FinetuneConfig::default(),
            subtype: SubtypeConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// How masked-out cell pixels are filled in environment patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    /// Per-channel mean color of the training crops.
    DatasetMean,
    /// Raw zero (black) before normalization.
    Zero,
    /// Explicit RGB value in [0,1].
    Value([f32; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Mask every cell intersecting the patch (default).
    AllCells,
    /// Mask only the patch's own target cell.
    TargetOnly,
    /// Leave the raw window untouched.
    None,
}

/// One decodable biomarker channel in a co-registered IHC image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerChannel {
    pub name: String,
    /// Which RGB channel carries this biomarker's expression, 0..3.
    pub channel: usize,
    /// Pixels below this intensity (in [0,1]) do not count as expressed.
    #[serde(default = "default_min_intensity")]
    pub min_intensity: f32,
}

fn default_min_intensity() -> f32 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Crop window side = window_scale * max(bbox height, bbox width).
    pub window_scale: f64,
    /// Cell crop output side in pixels.
    pub crop_size: usize,
    /// Environment window side in slide pixels.
    pub env_size: usize,
    /// Environment patch side after resizing to the encoder input.
    pub env_input_size: usize,
    pub mask_policy: MaskPolicy,
    pub mask_fill: MaskFill,
    /// IHC window side multiplier relative to the crop window side.
    pub ihc_window_scale: f64,
    /// Minimum share of total expression the winning biomarker must hold.
    pub ihc_dominance_threshold: f64,
    pub biomarkers: Vec<BiomarkerChannel>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            window_scale: 2.0,
            crop_size: 32,
            env_size: 128,
            env_input_size: 32,
            mask_policy: MaskPolicy::AllCells,
            mask_fill: MaskFill::DatasetMean,
            ihc_window_scale: 5.0,
            ihc_dominance_threshold: 0.7,
            biomarkers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub blur_sigma: (f64, f64),
    pub rotation_degrees: (f64, f64),
    /// Area fraction range for the random resized crop (local pipeline).
    pub crop_scale: (f64, f64),
    pub p_jitter: f64,
    pub p_grayscale: f64,
    pub p_blur: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rotation: f64,
    /// Asymmetric global/local views; false makes both pipelines cropped.
    pub multi_crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            blur_sigma: (0.1, 2.0),
            rotation_degrees: (0.0, 180.0),
            crop_scale: (0.2, 1.0),
            p_jitter: 0.8,
            p_grayscale: 0.2,
            p_blur: 0.5,
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rotation: 0.5,
            multi_crop: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_jitter", self.p_jitter),
            ("p_grayscale", self.p_grayscale),
            ("p_blur", self.p_blur),
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_rotation", self.p_rotation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        if self.crop_scale.0 <= 0.0 || self.crop_scale.0 > self.crop_scale.1 || self.crop_scale.1 > 1.0 {
            return Err(config_err(format!(
                "crop_scale must satisfy 0 < min <= max <= 1, got {:?}",
                self.crop_scale
            )));
        }
        if self.blur_sigma.0 <= 0.0 || self.blur_sigma.0 > self.blur_sigma.1 {
            return Err(config_err(format!(
                "blur_sigma must satisfy 0 < min <= max, got {:?}",
                self.blur_sigma
            )));
        }
        if self.rotation_degrees.0 > self.rotation_degrees.1 {
            return Err(config_err("rotation_degrees range is empty".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Four conv blocks with average pooling; the test-scale encoder.
    Small4,
    /// Pre-activated 18-conv-layer residual network (reference scale).
    PreactResnet18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub env_encoder: BackboneKind,
    /// Channel plan for the Small4 encoder.
    pub small4_channels: [usize; 4],
    /// Backbone feature width (cell encoders).
    pub feature_dim: usize,
    /// Environment encoder feature width.
    pub env_dim: usize,
    pub projector_hidden: usize,
    pub embed_dim: usize,
    pub predictor_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::Small4,
            env_encoder: BackboneKind::Small4,
            small4_channels: [8, 16, 32, 64],
            feature_dim: 512,
            env_dim: 512,
            projector_hidden: 128,
            embed_dim: 64,
            predictor_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Weight of the environment loss in the total loss.
    pub lambda: f64,
    /// Momentum factor for the key encoder update.
    pub momentum: f64,
    pub batch_size: usize,
    /// Negative queue capacity; 0 disables the memory bank.
    pub queue_capacity: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs between checkpoints (the final epoch is always written).
    pub checkpoint_every: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            temperature: 0.07,
            lambda: 1.0,
            momentum: 0.999,
            batch_size: 1024,
            queue_capacity: 65536,
            epochs: 500,
            warmup_epochs: 10,
            lr: 0.001,
            weight_decay: 0.0001,
            checkpoint_every: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(config_err(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.lambda < 0.0 {
            return Err(config_err(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(config_err(format!("momentum must lie in [0,1], got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(config_err("batch_size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    MomentumEncoder,
    Backbone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub source: EmbeddingSource,
    /// Cluster count; 0 = number of distinct ground-truth labels.
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            source: EmbeddingSource::MomentumEncoder,
            k: 0,
            n_init: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// 1 = linear head, 2 = one hidden layer of `head_hidden`.
    pub head_depth: usize,
    pub head_hidden: usize,
    pub freeze_backbone: bool,
    pub label_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Encoder learning rate when the backbone is unfrozen.
    pub backbone_lr: f64,
    pub weight_decay: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            head_depth: 1,
            head_hidden: 256,
            freeze_backbone: true,
            label_fraction: 1.0,
            epochs: 300,
            batch_size: 1024,
            lr: 0.001,
            backbone_lr: 0.0001,
            weight_decay: 1e-5,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(config_err(format!(
                "label_fraction must lie in (0,1], got {}",
                self.label_fraction
            )));
        }
        if self.head_depth != 1 && self.head_depth != 2 {
            return Err(config_err(format!("head_depth must be 1 or 2, got {}", self.head_depth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubtypeConfig {
    pub patch_size: usize,
    /// Patch group count used to de-bias frequent patch kinds.
    pub groups: usize,
    pub per_group: usize,
    /// Flat cluster count for the slide dendrogram cut.
    pub n_flat: usize,
    /// Explained-variance fraction retained by PCA.
    pub pca_variance: f64,
}

impl Default for SubtypeConfig {
    fn default() -> Self {
        SubtypeConfig {
            patch_size: 400,
            groups: 5,
            per_group: 100,
            n_flat: 4,
            pca_variance: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    /// Class signal in cell appearance plus correlated environment texture.
    Benchmark,
    /// Class signal carried almost entirely by the environment texture.
    EnvSignal,
    /// Multi-slide set drawn from distinct cell-distribution families.
    Subtype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub mode: SyntheticMode,
    pub train_cells: usize,
    pub test_cells: usize,
    pub cells_per_slide: usize,
    /// Subtype mode: slides per distribution family.
    pub slides_per_family: usize,
    pub slide_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            mode: SyntheticMode::Benchmark,
            train_cells: 600,
            test_cells: 300,
            cells_per_slide: 30,
            slides_per_family: 3,
            slide_size: 800,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::VoltaError::File {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.hyper.validate()?;
        self.finetune.validate()?;
        if self.ingest.window_scale <= 0.0 {
            return Err(config_err(format!(
                "ingest.window_scale must be > 0, got {}",
                self.ingest.window_scale
            )));
        }
        if self.ingest.crop_size == 0 || self.ingest.env_input_size == 0 {
            return Err(config_err("ingest sizes must be positive"));
        }
        if self.ingest.env_size < self.ingest.crop_size {
            return Err(config_err(format!(
                "ingest.env_size ({}) must be >= crop_size ({})",
                self.ingest.env_size, self.ingest.crop_size
            )));
        }
        if !(0.0..=1.0).contains(&self.ingest.ihc_dominance_threshold) {
            return Err(config_err("ihc_dominance_threshold must lie in [0,1]"));
        }
        for b in &self.ingest.biomarkers {
            if b.channel > 2 {
                return Err(config_err(format!(
                    "biomarker {} channel must be 0..3, got {}",
                    b.name, b.channel
                )));
            }
        }
        if !(0.0 < self.subtype.pca_variance && self.subtype.pca_variance <= 1.0) {
            return Err(config_err("subtype.pca_variance must lie in (0,1]"));
        }
        Ok(())
    }

    /// Hash over every field that shapes the trained model: seed, ingest
    /// geometry, augmentation, architecture, and optimization. Evaluation-side
    /// sections are excluded so reading a checkpoint does not depend on them.
    pub fn model_hash(&self) -> String {
        #[derive(Serialize)]
        struct ModelScope<'a> {
            seed: u64,
            ingest: &'a IngestConfig,
            augment: &'a AugmentConfig,
            model: &'a ModelConfig,
            hyper: &'a HyperParams,
        }
        let scope = ModelScope {
            seed: self.seed,
            ingest: &self.ingest,
            augment: &self.augment,
            model: &self.model,
            hyper: &self.hyper,
        };
        let bytes = serde_json::to_vec(&scope).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex::encode(&hasher.finalize()[..16])
    }

    /// Hash over the full configuration (used by run manifests).
    pub fn full_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex::encode(&hasher.finalize()[..16])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.model_hash(), back.model_hash());
    }

    #[test]
    fn hash_tracks_semantic_fields() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.hyper.temperature = 0.1;
        assert_ne!(a.model_hash(), b.model_hash());
        let mut c = RunConfig::default();
        c.eval.k = 7;
        // Evaluation knobs do not invalidate checkpoints.
        assert_eq!(a.model_hash(), c.model_hash());
        assert_ne!(a.full_hash(), c.full_hash());
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut cfg = RunConfig::default();
        cfg.hyper.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_env_smaller_than_crop() {
        let mut cfg = RunConfig::default();
        cfg.ingest.env_size = 16;
        assert!(cfg.validate().is_err());
    }
}
