use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::cycle_consistency::{LossWeights, Reduction};
use crate::error::{CcdfError, Result};
use crate::nn::{FeatureConfig, GeneratorConfig, SegmenterConfig};
use crate::preprocess::StandardizeOptions;

pub const SEED_ENV: &str = "CCDF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Which network trains first in the alternating fine-tuning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Generator,
    Segmenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorShape {
    pub base_width: usize,
    pub depth: usize,
    pub res_blocks: usize,
    pub global_skip: bool,
}

impl GeneratorShape {
    pub fn with_channels(&self, channels: usize) -> GeneratorConfig {
        GeneratorConfig {
            channels,
            base_width: self.base_width,
            depth: self.depth,
            res_blocks: self.res_blocks,
            global_skip: self.global_skip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterShape {
    pub base_width: usize,
    pub depth: usize,
}

impl SegmenterShape {
    pub fn with_channels(&self, channels: usize) -> SegmenterConfig {
        SegmenterConfig {
            channels,
            base_width: self.base_width,
            depth: self.depth,
        }
    }
}

/// Every training hyperparameter. Network input channels come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub overlap: usize,
    pub batch_size: usize,
    pub stage_epochs: [usize; 3],
    /// Learning-rate range shared by stages 1 and 2.
    pub lr_stage12: LrRange,
    pub lr_stage3: LrRange,
    pub warmup_fraction: f64,
    pub lambda_cont: f64,
    pub lambda_reg: f64,
    pub lambda_sem: f64,
    pub reduction: Reduction,
    pub threshold: f64,
    pub rng_seed: u64,
    /// Batches per phase in stage 3; `None` switches once per epoch.
    pub alternation_period: Option<usize>,
    pub stage3_first: Phase,
    pub adam: AdamConfig,
    pub generator: GeneratorShape,
    pub segmenter: SegmenterShape,
    pub features: FeatureConfig,
    pub standardize: StandardizeOptions,
    /// Include the cycle terms in stage 1.
    pub use_cycle: bool,
    pub precision: Precision,
}

impl TrainConfig {
    fn full_scale(weights: LossWeights) -> Self {
        Self {
            patch_size: 224,
            overlap: 12,
            batch_size: 10,
            stage_epochs: [30, 30, 50],
            lr_stage12: LrRange { min: 1e-5, max: 3e-4 },
            lr_stage3: LrRange { min: 1e-5, max: 1e-4 },
            warmup_fraction: 0.1,
            lambda_cont: weights.lambda_cont,
            lambda_reg: weights.lambda_reg,
            lambda_sem: weights.lambda_sem,
            reduction: weights.reduction,
            threshold: 0.5,
            rng_seed: 0,
            alternation_period: None,
            stage3_first: Phase::Generator,
            adam: AdamConfig::default(),
            generator: GeneratorShape {
                base_width: 32,
                depth: 3,
                res_blocks: 4,
                global_skip: true,
            },
            segmenter: SegmenterShape { base_width: 32, depth: 3 },
            features: FeatureConfig::Vgg16 {
                weights: PathBuf::from("vgg16_features.safetensors"),
                depth: 29,
                bands: Some(vec![0, 1, 2]),
            },
            standardize: StandardizeOptions::default(),
            use_cycle: true,
            precision: Precision::F32,
        }
    }

    /// Full-scale settings with the Wuhan loss weights.
    pub fn wh() -> Self {
        Self::full_scale(LossWeights::wh())
    }

    /// Full-scale settings with the Hanyang loss weights.
    pub fn hy() -> Self {
        Self::full_scale(LossWeights::hy())
    }

    /// Small CPU-friendly setup for 256 x 256 synthetic scenes.
    pub fn toy() -> Self {
        Self {
            patch_size: 64,
            overlap: 8,
            batch_size: 1,
            stage_epochs: [5, 5, 5],
            lr_stage12: LrRange { min: 1e-4, max: 2e-3 },
            lr_stage3: LrRange { min: 1e-5, max: 5e-4 },
            warmup_fraction: 0.1,
            lambda_cont: 0.2,
            lambda_reg: 0.75,
            lambda_sem: 0.7,
            reduction: Reduction::Mean,
            threshold: 0.5,
            rng_seed: 7,
            alternation_period: None,
            stage3_first: Phase::Generator,
            adam: AdamConfig::default(),
            generator: GeneratorShape {
                base_width: 16,
                depth: 2,
                res_blocks: 1,
                global_skip: true,
            },
            segmenter: SegmenterShape { base_width: 8, depth: 2 },
            features: FeatureConfig::RandomConv {
                widths: vec![8, 8],
                seed: 11,
                bands: None,
            },
            standardize: StandardizeOptions::default(),
            use_cycle: true,
            precision: Precision::F32,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_cont: self.lambda_cont,
            lambda_reg: self.lambda_reg,
            lambda_sem: self.lambda_sem,
            reduction: self.reduction,
        }
    }

    pub fn dtype(&self) -> DType {
        self.precision.dtype()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CcdfError::InvalidConfig(m));
        if self.patch_size == 0 || self.overlap >= self.patch_size {
            return bad(format!("need 0 <= overlap < patch_size, got {} and {}", self.overlap, self.patch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.stage_epochs.contains(&0) {
            return bad(format!("every stage needs >= 1 epoch, got {:?}", self.stage_epochs));
        }
        for (name, r) in [("lr_stage12", self.lr_stage12), ("lr_stage3", self.lr_stage3)] {
            if !(r.min > 0.0 && r.min <= r.max && r.max.is_finite()) {
                return bad(format!("{name}: need 0 < min <= max, got {} and {}", r.min, r.max));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.alternation_period == Some(0) {
            return bad("alternation_period must be >= 1".into());
        }
        for (name, depth) in [("generator", self.generator.depth), ("segmenter", self.segmenter.depth)] {
            if self.patch_size % (1 << depth) != 0 {
                return bad(format!("patch_size {} not divisible by 2^{depth} ({name} depth)", self.patch_size));
            }
        }
        self.weights().validate()
    }

    /// Reads TOML, or JSON when the extension is `.json`. Unknown keys are errors.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CcdfError::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| CcdfError::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CcdfError::InvalidConfig(e.to_string()))
    }

    /// Replaces `rng_seed` with the value of `CCDF_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.rng_seed = v
                .trim()
                .parse()
                .map_err(|_| CcdfError::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}
