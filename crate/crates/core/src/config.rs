//! Run configuration: one TOML file, every key optional, plus `--key=value`
//! overrides and the `FGT2M_SEED` environment override.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capr::{BlockOrder, CaprConfig};
use crate::dataset::CHANNELS;
use crate::error::{Error, Result};
use crate::ling_graph::GatConfig;
use crate::metrics::EmbedderConfig;
use crate::model::ModelConfig;

pub const SEED_ENV: &str = "FGT2M_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Number of reverse steps used when sampling; fewer than `steps`
    /// runs the sampler on an evenly spaced subsequence.
    pub sample_steps: usize,
    pub clamp_x0: Option<f64>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sample_steps: 1000,
            clamp_x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub heads: usize,
    pub capr_blocks: usize,
    pub lambda: f64,
    pub block_layer_order: Option<String>,
    pub mlp_ratio: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            capr_blocks: 3,
            lambda: 0.1,
            block_layer_order: None,
            mlp_ratio: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsamSection {
    pub gat_layers: usize,
    pub edge_dim: usize,
    pub heads: usize,
    pub upos_gains: bool,
    pub leaky_slope: f64,
}

impl Default for LsamSection {
    fn default() -> Self {
        let g = GatConfig::default();
        Self {
            gat_layers: g.layers,
            edge_dim: g.edge_dim,
            heads: g.heads,
            upos_gains: g.upos_gains,
            leaky_slope: g.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSection {
    /// `trainable`, `hashed` or `file`.
    pub embedding: String,
    pub embedding_file: Option<String>,
    pub hash_buckets: u64,
    pub max_words: usize,
}

impl Default for TextSection {
    fn default() -> Self {
        Self {
            embedding: "trainable".into(),
            embedding_file: None,
            hash_buckets: 4096,
            max_words: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub records: usize,
    pub frames: usize,
    pub seed: u64,
    /// Records at the end of the corpus kept out of training.
    pub heldout: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            records: 2000,
            frames: 64,
            seed: 0,
            heldout: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub log_every: usize,
    /// Evaluate (and checkpoint) every this many iterations; 0 disables.
    pub eval_every: usize,
    /// Stop once held-out R-precision top-1 reaches this value.
    pub early_stop_r_top1: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch: 128,
            iters: 80_000,
            seed: 0,
            grad_clip: Some(1.0),
            log_every: 100,
            eval_every: 0,
            early_stop_r_top1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seed: u64,
    /// Held-out captions generated for R-precision, FID and MM Dist.
    pub samples: usize,
    pub repeats: usize,
    pub diversity_subset: usize,
    /// Captions and generations per caption for multimodality.
    pub mm_texts: usize,
    pub mm_generations: usize,
    pub mm_pairs: usize,
    pub embedder_epochs: usize,
    pub embedder_dim: usize,
    pub sample_batch: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 256,
            repeats: 5,
            diversity_subset: 50,
            mm_texts: 8,
            mm_generations: 32,
            mm_pairs: 32,
            embedder_epochs: 30,
            embedder_dim: 32,
            sample_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub lsam_off: bool,
    pub capr1_off: bool,
    pub capr2_off: bool,
    pub block_layer_order: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub diffusion: DiffusionSection,
    pub model: ModelSection,
    pub lsam: LsamSection,
    pub text: TextSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, then applies `section.key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in overrides {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key {key:?} must look like section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(Error::Config(format!("{section} is not a section")));
            };
            sec.insert(field.to_string(), parse_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_with(&text, overrides)?;
        cfg.apply_seed_env()?;
        Ok(cfg)
    }

    /// Applies `FGT2M_SEED`, if set, to every seed.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn block_order(&self) -> Result<BlockOrder> {
        let m = self.model.block_layer_order.as_deref();
        let a = self.ablation.block_layer_order.as_deref();
        match (m, a) {
            (Some(x), Some(y)) if x != y => Err(Error::Config(format!(
                "model.block_layer_order={x} conflicts with ablation.block_layer_order={y}"
            ))),
            (Some(x), _) | (None, Some(x)) => BlockOrder::parse(x),
            (None, None) => Ok(BlockOrder::DeepFirst),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.diffusion.steps == 0 {
            return bad("diffusion.steps must be positive".into());
        }
        if self.diffusion.sample_steps == 0 || self.diffusion.sample_steps > self.diffusion.steps {
            return bad(format!(
                "diffusion.sample_steps must be in 1..={}",
                self.diffusion.steps
            ));
        }
        if self.model.width == 0 || self.model.heads == 0 || !self.model.width.is_multiple_of(self.model.heads) {
            return bad(format!(
                "model.width {} must be a positive multiple of model.heads {}",
                self.model.width, self.model.heads
            ));
        }
        if self.model.lambda < 0.0 {
            return bad("model.lambda must be non-negative".into());
        }
        if !self.ablation.lsam_off && self.lsam.gat_layers != self.model.capr_blocks {
            return bad(format!(
                "lsam.gat_layers ({}) must equal model.capr_blocks ({})",
                self.lsam.gat_layers, self.model.capr_blocks
            ));
        }
        if !matches!(self.text.embedding.as_str(), "trainable" | "hashed" | "file") {
            return bad(format!(
                "text.embedding must be trainable, hashed or file, got {:?}",
                self.text.embedding
            ));
        }
        if self.text.embedding == "file" && self.text.embedding_file.is_none() {
            return bad("text.embedding=file needs text.embedding_file".into());
        }
        if self.data.frames < crate::dataset::MIN_FRAMES {
            return bad(format!("data.frames must be at least {}", crate::dataset::MIN_FRAMES));
        }
        if self.train.batch == 0 || self.train.lr <= 0.0 {
            return bad("train.batch and train.lr must be positive".into());
        }
        self.block_order()?;
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            gat: GatConfig {
                layers: self.lsam.gat_layers,
                width: self.model.width,
                edge_dim: self.lsam.edge_dim,
                heads: self.lsam.heads,
                leaky_slope: self.lsam.leaky_slope,
                upos_gains: self.lsam.upos_gains,
            },
            capr: CaprConfig {
                channels: CHANNELS,
                width: self.model.width,
                heads: self.model.heads,
                blocks: self.model.capr_blocks,
                lambda: self.model.lambda,
                order: self.block_order()?,
                mlp_ratio: self.model.mlp_ratio,
                capr1_off: self.ablation.capr1_off,
                capr2_off: self.ablation.capr2_off,
            },
            lsam_off: self.ablation.lsam_off,
            max_words: self.text.max_words,
        })
    }

    pub fn embedder_config(&self) -> EmbedderConfig {
        EmbedderConfig {
            dim: self.eval.embedder_dim,
            epochs: self.eval.embedder_epochs,
            max_words: self.text.max_words,
            ..EmbedderConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.train.lr, 5e-5);
        assert_eq!(c.train.batch, 128);
        assert_eq!(c.diffusion.steps, 1000);
        assert_eq!(c.model.lambda, 0.1);
        assert_eq!(c.lsam.gat_layers, 3);
        assert_eq!(c.block_order().unwrap(), BlockOrder::DeepFirst);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[model]\nwidht = 3\n").is_err());
        assert!(RunConfig::from_toml("[modle]\nwidth = 3\n").is_err());
        let o = vec![("train.lrr".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_with("", &o).is_err());
    }

    #[test]
    fn overrides_apply_with_types() {
        let o = vec![
            ("train.lr".to_string(), "0.001".to_string()),
            ("ablation.lsam_off".to_string(), "true".to_string()),
            ("model.block_layer_order".to_string(), "shallow_first".to_string()),
        ];
        let c = RunConfig::from_toml_with("[train]\nlr = 0.5\n", &o).unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert!(c.ablation.lsam_off);
        assert_eq!(c.block_order().unwrap(), BlockOrder::ShallowFirst);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn conflicting_orders_rejected() {
        let t = "[model]\nblock_layer_order = \"deep_first\"\n[ablation]\nblock_layer_order = \"shallow_first\"\n";
        assert!(RunConfig::from_toml(t).is_err());
    }
}
